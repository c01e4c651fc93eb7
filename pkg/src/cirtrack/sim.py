"""Closed-loop simulation, reference generators and Monte Carlo averaging."""

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone

from . import matcore
from .cir import CIRController
from .estimator import NoiseSpec
from .exceptions import CirError, InvalidInputError, NonMinimumPhaseWarning
from .lqg import LQGController, lqg_baseline  # noqa: F401  (re-exported)
from .model import check_feasibility
from .squaring import LiftedController

REFERENCE_KINDS = ("step", "sine", "sawtooth")


@dataclass(frozen=True)
class ChannelComponent:
    """One additive piece of a reference channel.

    ``phase`` is in radians for ``sine`` and ``sawtooth``; ``start`` is the
    first step at which a ``step`` is on.
    """

    kind: str
    amplitude: float = 1.0
    period: float = 100.0
    offset: float = 0.0
    phase: float = 0.0
    start: int = 0

    def __post_init__(self):
        if self.kind not in REFERENCE_KINDS:
            raise InvalidInputError(f"reference kind must be one of {REFERENCE_KINDS}, got {self.kind!r}")
        if self.kind != "step" and not self.period > 0:
            raise InvalidInputError(f"period must be positive, got {self.period}")

    def evaluate(self, k):
        k = np.asarray(k, dtype=float)
        if self.kind == "step":
            return self.offset + self.amplitude * (k >= self.start)
        if self.kind == "sine":
            return self.offset + self.amplitude * np.sin(2 * np.pi * k / self.period + self.phase)
        # linear ramp 0 -> amplitude over one period, instant reset
        frac = np.mod(k / self.period + self.phase / (2 * np.pi), 1.0)
        return self.offset + self.amplitude * frac


class ReferenceSignal:
    """Desired output sequence with one step of preview.

    Build it either from per-channel generator components (each channel is
    the sum of its components) or from an explicit sample matrix whose row
    ``k`` is ``y_ref_k``.
    """

    def __init__(self, channels=None, samples=None):
        if (channels is None) == (samples is None):
            raise InvalidInputError("give exactly one of channels or samples")
        self.channels = None
        self.samples = None
        if channels is not None:
            chans = []
            for ch in channels:
                comps = [ch] if isinstance(ch, ChannelComponent) else list(ch)
                if not comps:
                    raise InvalidInputError("reference channel without components")
                chans.append(tuple(comps))
            self.channels = tuple(chans)
        else:
            s = np.asarray(samples, dtype=float)
            if s.ndim == 1:
                s = s.reshape(-1, 1)
            if s.ndim != 2 or not np.all(np.isfinite(s)):
                raise InvalidInputError("reference samples must be a finite 2-D array")
            self.samples = s

    @property
    def kind(self):
        return "samples" if self.samples is not None else "generated"

    @property
    def n_channels(self):
        return self.samples.shape[1] if self.samples is not None else len(self.channels)

    @classmethod
    def from_dict(cls, d):
        if "samples" in d:
            return cls(samples=d["samples"])
        chans = []
        for ch in d["channels"]:
            parts = ch if isinstance(ch, list) else [ch]
            chans.append([ChannelComponent(**p) for p in parts])
        return cls(channels=chans)

    def select(self, rows):
        """Reference restricted to the given channels."""
        rows = list(rows)
        if self.samples is not None:
            return ReferenceSignal(samples=self.samples[:, rows])
        return ReferenceSignal(channels=[self.channels[i] for i in rows])

    def values(self, T):
        """(T+2, l) array of ``y_ref_0..y_ref_{T+1}``."""
        if self.samples is not None:
            if self.samples.shape[0] < T + 2:
                raise InvalidInputError(
                    f"reference has {self.samples.shape[0]} samples, need T+2 = {T + 2}"
                )
            return self.samples[: T + 2].copy()
        k = np.arange(T + 2)
        return np.column_stack([sum(c.evaluate(k) for c in comps) for comps in self.channels])


@dataclass
class SimulationTrace:
    """Per-step record of one closed-loop run (row ``k`` is time step ``k``).

    ``u[k]`` is the input applied at step ``k``; the final row carries zeros
    because no input is applied after the last sample. ``y_pred[k]`` is the
    controller's prediction of ``y_k`` made at step ``k-1``.
    """

    x: np.ndarray
    y: np.ndarray
    y_ref: np.ndarray
    u: np.ndarray
    y_pred: np.ndarray
    dt: float = 0.0
    metadata: dict = field(default_factory=dict)
    y_ref_raw: Optional[np.ndarray] = None

    @property
    def T(self):
        return self.x.shape[0] - 1

    @property
    def error(self):
        return self.y_ref - self.y

    @property
    def t(self):
        k = np.arange(self.T + 1)
        return k * self.dt if self.dt > 0 else k.astype(float)

    def mse(self, start=1):
        """Per-channel mean squared tracking error over steps ``start..T``."""
        return np.mean(self.error[start:] ** 2, axis=0)

    def to_csv(self, path):
        l, p = self.y.shape[1], self.u.shape[1]
        header = ["k", "t"]
        header += [f"y_ref_{i + 1}" for i in range(l)]
        header += [f"y_{i + 1}" for i in range(l)]
        header += [f"u_{i + 1}" for i in range(p)]
        header += [f"err_{i + 1}" for i in range(l)]
        cols = [self.y_ref, self.y, self.u, self.error]
        if self.y_ref_raw is not None:
            header += [f"y_ref_raw_{i + 1}" for i in range(l)]
            cols.append(self.y_ref_raw)
        body = np.hstack(cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(self.T + 1):
                w.writerow([k, _fmt(self.t[k])] + [_fmt(v) for v in body[k]])


def _fmt(v):
    return repr(float(v))


def plant_step(model, noise, x, u, rng):
    """Noisy plant update.

    Always draws ``n + l`` standard normals (process first), so the random
    stream does not depend on the covariance values.

    Returns:
        tuple: ``(x_next, y_next)``
    """
    w = rng.standard_normal(model.n)
    v = rng.standard_normal(model.l)
    x_next = model.A @ x + model.B @ u
    y_next = model.C @ x_next
    if noise is not None:
        x_next = x_next + noise.process_factor @ w
        y_next = model.C @ x_next + noise.measurement_factor @ v
    return x_next, y_next


def _warn_phase(model, controller):
    if not isinstance(controller, (CIRController, LiftedController)):
        return None
    if isinstance(controller, LiftedController):
        from .squaring import make_input_transform

        model = make_input_transform(model).model_tilde
    report = check_feasibility(model)
    if report.min_phase is False:
        warnings.warn(
            "plant has invariant zeros on or outside the unit circle; "
            "bounded inputs are not guaranteed",
            NonMinimumPhaseWarning,
            stacklevel=3,
        )
    return report.min_phase


def run_closed_loop(model, noise, controller, reference, T, x0=None, seed=None,
                    check_phase=True, name=None):
    """Simulate ``controller`` against ``model`` for ``T`` steps.

    Args:
        model (StateSpaceModel): Plant (also what the controller is fit on).
        noise (NoiseSpec or None): Plant noise; ``None`` disables draws.
        controller: Unfitted controller estimator; a clone is fit per run.
        reference (ReferenceSignal or array_like): Reference, (T+2, l) if raw.
        T (int): Number of controller calls / plant steps.
        x0: True initial state (default zero).
        seed (int): Overrides ``noise.seed``.

    At step ``k`` the controller sees only ``y_k`` and ``y_ref_{k+1}``.
    Controller errors are re-raised with their ``step`` attribute set.
    """
    T = int(T)
    if T < 0:
        raise InvalidInputError("T must be >= 0")
    if noise is not None:
        noise.check(model)
    if not isinstance(reference, ReferenceSignal):
        reference = ReferenceSignal(samples=reference)
    yref = reference.values(T)
    if yref.shape[1] != model.l:
        raise InvalidInputError(f"reference has {yref.shape[1]} channels, model has l={model.l}")
    if seed is None:
        seed = noise.seed if noise is not None else 0
    rng = np.random.default_rng(seed)
    min_phase = _warn_phase(model, controller) if check_phase else None

    ctrl = clone(controller).fit(model)
    n, p, l = model.n, model.p, model.l
    xs = np.empty((T + 1, n))
    ys = np.empty((T + 1, l))
    us = np.zeros((T + 1, p))
    preds = np.empty((T + 1, l))

    x = np.zeros(n) if x0 is None else matcore.as_vector(x0, n, "x0")
    y = model.C @ x
    v0 = rng.standard_normal(l)
    if noise is not None:
        y = y + noise.measurement_factor @ v0
    preds[0] = getattr(ctrl, "y_pred_", np.full(l, np.nan))
    for k in range(T + 1):
        xs[k], ys[k] = x, y
        if k == T:
            break
        try:
            u = ctrl.step(y, yref[k + 1])
        except CirError as exc:
            err = type(exc)(f"step {k}: {exc}")
            err.step = k
            raise err from exc
        us[k] = u
        preds[k + 1] = ctrl.y_pred_
        x, y = plant_step(model, noise, x, u, rng)

    meta = {
        "seed": int(seed),
        "model": model.fingerprint(),
        "controller": type(controller).__name__,
        "min_phase": min_phase,
        "name": name,
    }
    return SimulationTrace(xs, ys, yref[: T + 1], us, preds, model.dt, meta)


@dataclass
class Scenario:
    """Everything :func:`run_closed_loop` needs except the seed."""

    model: object
    controller: object
    reference: object
    T: int
    noise: Optional[NoiseSpec] = None
    x0: Optional[np.ndarray] = None
    name: Optional[str] = None

    def run(self, seed, check_phase=True):
        return run_closed_loop(self.model, self.noise, self.controller, self.reference,
                               self.T, self.x0, seed, check_phase=check_phase, name=self.name)


@dataclass
class MonteCarloSummary:
    runs: int
    mean_error: np.ndarray
    std_error: np.ndarray
    mse_per_channel: np.ndarray
    dt: float = 0.0

    def to_csv(self, path):
        T1, l = self.mean_error.shape
        header = ["k", "t"] + [f"mean_err_{i + 1}" for i in range(l)]
        header += [f"std_err_{i + 1}" for i in range(l)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(T1):
                t = k * self.dt if self.dt > 0 else float(k)
                row = [k, _fmt(t)] + [_fmt(v) for v in self.mean_error[k]]
                w.writerow(row + [_fmt(v) for v in self.std_error[k]])

    def summary_lines(self):
        return [f"mse,{i + 1},{_fmt(v)}" for i, v in enumerate(self.mse_per_channel)]


def default_n_jobs():
    env = os.environ.get("CIR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError(f"CIR_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _run_errors(scenario, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonMinimumPhaseWarning)
        return scenario.run(seed, check_phase=False).error


def monte_carlo(scenario, runs, base_seed=0, n_jobs=None):
    """Repeat ``scenario`` with seeds ``base_seed + i`` and aggregate errors.

    ``std_error`` is the sample standard deviation across runs (zero when
    ``runs == 1``); ``mse_per_channel`` averages the squared error over runs
    and steps ``1..T``. Results do not depend on ``n_jobs``.
    """
    runs = int(runs)
    if runs < 1:
        raise InvalidInputError("runs must be >= 1")
    _warn_phase(scenario.model, scenario.controller)
    n_jobs = default_n_jobs() if n_jobs is None else int(n_jobs)
    seeds = [base_seed + i for i in range(runs)]
    # process start-up dominates below a few dozen short runs
    if n_jobs == 1 or runs * (scenario.T + 1) < 20_000:
        errors = [_run_errors(scenario, s) for s in seeds]
    else:
        errors = Parallel(n_jobs=min(n_jobs, runs))(delayed(_run_errors)(scenario, s) for s in seeds)
    E = np.stack(errors)
    mean = E.mean(axis=0)
    std = E.std(axis=0, ddof=1) if runs > 1 else np.zeros_like(mean)
    mse = np.mean(E[:, 1:, :] ** 2, axis=(0, 1)) if E.shape[1] > 1 else np.zeros(E.shape[2])
    return MonteCarloSummary(runs, mean, std, mse, scenario.model.dt)


def unbiasedness_check(summary, start=1, z=4.0):
    """Boolean mask (steps ``start..T`` x channels) where ``|mean| <= z std / sqrt(runs)``."""
    bound = z * summary.std_error[start:] / math.sqrt(summary.runs)
    return np.abs(summary.mean_error[start:]) <= bound
