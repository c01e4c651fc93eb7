"""Experiment runner: ``cirtrack {check,run,montecarlo} --config PATH``.

Exit codes: 0 success, 2 config error, 3 infeasible model, 4 numerical failure.
"""

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from . import matcore
from .cir import CIRController
from .estimator import NoiseSpec
from .exceptions import (
    ConfigError,
    InfeasibleError,
    InvalidInputError,
    NonMinimumPhaseWarning,
    NumericalFailureError,
    UnsupportedShapeError,
)
from .lqg import LQGController
from .model import StateSpaceModel, check_feasibility, format_spectrum
from .sim import ReferenceSignal, Scenario, monte_carlo, run_closed_loop
from .squaring import (
    LiftedController,
    batch_matrices,
    drop_outputs,
    make_input_transform,
    project_reference_samples,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4
NONSQUARE_MODES = ("none", "input-transform", "project", "drop-outputs")
BUNDLED = ("example1", "example2-rc", "sec8-project", "sec8-drop", "sec8-lift")


@dataclass
class ExperimentConfig:
    name: str
    model: StateSpaceModel
    noise: Optional[NoiseSpec]
    design_Q: object
    design_R: object
    controller: dict
    reference: ReferenceSignal
    T: int
    runs: int = 1
    seed: int = 0
    x0: Optional[np.ndarray] = None
    nonsquare: str = "none"
    keep: Optional[list] = None
    output: dict = field(default_factory=dict)


def bundled_config_path(name):
    return resources.files("cirtrack") / "configs" / f"{name}.json"


def _field(d, key, where, default=..., types=None):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    v = d[key]
    if types is not None and not isinstance(v, types):
        raise ConfigError(f"{where}.{key}: expected {types}, got {type(v).__name__}")
    return v


def load_config(path):
    """Read and resolve a JSON experiment config.

    ``path`` may also be the name of a bundled config (see ``BUNDLED``).
    """
    p = str(path)
    if not os.path.exists(p) and p in BUNDLED:
        p = str(bundled_config_path(p))
    try:
        with open(p) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(p)))


def parse_config(raw, base_dir="."):
    try:
        return _parse(raw, base_dir)
    except (InvalidInputError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _parse(raw, base_dir):
    mdict = _field(raw, "model", "config", types=dict)
    if "path" in mdict:
        mpath = os.path.join(base_dir, mdict["path"])
        try:
            with open(mpath) as fh:
                mdict = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"model.path: cannot read {mpath}: {exc}") from None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = StateSpaceModel.from_dict(mdict)
    except InvalidInputError as exc:
        raise ConfigError(f"model: {exc}") from None

    ns = _field(raw, "nonsquare", "config", {}, dict)
    mode = _field(ns, "mode", "nonsquare", "none", str)
    if mode not in NONSQUARE_MODES:
        raise ConfigError(f"nonsquare.mode: must be one of {NONSQUARE_MODES}, got {mode!r}")
    keep = _field(ns, "keep", "nonsquare", None, list)
    if mode == "drop-outputs" and keep is None:
        raise ConfigError("nonsquare.keep: required for mode 'drop-outputs' (1-based indices)")

    nd = _field(raw, "noise", "config", {}, dict)
    seed = int(_field(nd, "seed", "noise", 0, int))
    Q = _field(nd, "Q", "noise", 0.0)
    R = _field(nd, "R", "noise", 0.0)
    plant_noise = _field(nd, "plant", "noise", True, bool)

    cd = dict(_field(raw, "controller", "config", {"type": "cir"}, dict))
    ctype = cd.get("type", "cir")
    if ctype not in ("cir", "lqg"):
        raise ConfigError(f"controller.type: must be 'cir' or 'lqg', got {ctype!r}")

    ref = _field(raw, "reference", "config", types=dict)
    try:
        reference = ReferenceSignal.from_dict(ref)
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise ConfigError(f"reference: {exc}") from None

    T = _field(raw, "T", "config", types=int)
    runs = _field(raw, "runs", "config", 1, int)
    if T < 0 or runs < 1:
        raise ConfigError("config.T must be >= 0 and config.runs >= 1")
    x0 = raw.get("x0")
    if x0 is not None:
        x0 = matcore.as_vector(x0, model.n, "x0")
    return ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        model=model,
        noise=NoiseSpec.for_model(model, Q, R, seed) if plant_noise else None,
        design_Q=cd.pop("Q", Q),
        design_R=cd.pop("R", R),
        controller=cd,
        reference=reference,
        T=T,
        runs=runs,
        seed=seed,
        x0=x0,
        nonsquare=mode,
        keep=keep,
        output=_field(raw, "output", "config", {}, dict),
    )


def build_scenario(cfg):
    """Apply the non-square mode and return ``(scenario, raw_reference)``.

    ``raw_reference`` is the unprojected (T+1, l) reference in project mode,
    otherwise ``None``.
    """
    model = cfg.model
    reference = cfg.reference
    if cfg.nonsquare == "drop-outputs":
        keep0 = [int(i) - 1 for i in cfg.keep]
        model = drop_outputs(cfg.model, keep0)
        if reference.n_channels == cfg.model.l:
            reference = reference.select(keep0)
    if reference.n_channels != model.l:
        raise ConfigError(
            f"reference: {reference.n_channels} channel(s) given, model has l={model.l}"
        )

    params = {k: v for k, v in cfg.controller.items() if k != "type"}
    if cfg.controller.get("type", "cir") == "lqg":
        controller = LQGController(Q=cfg.design_Q, R=cfg.design_R, **params)
    else:
        controller = CIRController(Q=cfg.design_Q, R=cfg.design_R, **params)
    if cfg.nonsquare == "input-transform":
        controller = LiftedController(controller)

    raw_ref = None
    if cfg.nonsquare == "project":
        raw = reference.values(cfg.T)
        reference = ReferenceSignal(samples=project_reference_samples(model, raw, cfg.x0))
        raw_ref = raw[: cfg.T + 1]

    noise = cfg.noise
    if noise is not None and model is not cfg.model:
        noise = NoiseSpec.for_model(model, noise.Q, noise.R[np.ix_(keep0, keep0)], noise.seed)
    return Scenario(model, controller, reference, cfg.T, noise, cfg.x0, cfg.name), raw_ref


def cmd_check(cfg, out=None):
    out = out or sys.stdout
    report = check_feasibility(cfg.model)
    print(f"config       : {cfg.name}", file=out)
    print(f"n, p, l      : {cfg.model.n}, {cfg.model.p}, {cfg.model.l}", file=out)
    print(report.render(), file=out)
    ok = report.is_trackable
    if cfg.nonsquare == "drop-outputs":
        keep0 = [int(i) - 1 for i in cfg.keep]
        sub = check_feasibility(drop_outputs(cfg.model, keep0))
        print(f"-- after keeping outputs {cfg.keep}", file=out)
        print(sub.render(), file=out)
        ok = sub.is_trackable
    elif cfg.nonsquare == "input-transform":
        tr = make_input_transform(cfg.model)
        sub = check_feasibility(tr.model_tilde)
        print(f"-- input transform N = (CB)^+ = {np.round(tr.N, 6).tolist()}", file=out)
        print(sub.render(), file=out)
        ok = sub.is_trackable
    elif cfg.nonsquare == "project":
        bm = batch_matrices(cfg.model, max(cfg.T, 1))
        rank = matcore.numerical_rank(bm.M_r)
        print(f"-- rank(M_r), r={bm.r}: {rank} of {bm.M_r.shape[1]}", file=out)
        ok = rank == bm.M_r.shape[1]
    if report.min_phase is False:
        print("warning      : zeros on/outside unit circle; bounded inputs not guaranteed",
              file=out)
    print(f"verdict      : {'ok' if ok else 'not trackable'}", file=out)
    return EXIT_OK if ok else EXIT_INFEASIBLE


def _out_path(args, cfg, key, default):
    return args.out or cfg.output.get(key) or f"{cfg.name}_{default}.csv"


def cmd_run(cfg, out_path, out=None):
    out = out or sys.stdout
    scenario, raw_ref = build_scenario(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonMinimumPhaseWarning)
        trace = scenario.run(cfg.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    trace.y_ref_raw = raw_ref
    trace.to_csv(out_path)
    for i, v in enumerate(trace.mse()):
        print(f"mse,{i + 1},{float(v)!r}", file=out)
    return EXIT_OK


def cmd_montecarlo(cfg, out_path, out=None):
    out = out or sys.stdout
    scenario, _ = build_scenario(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonMinimumPhaseWarning)
        summary = monte_carlo(scenario, cfg.runs, cfg.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    summary.to_csv(out_path)
    for line in summary.summary_lines():
        print(line, file=out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cirtrack", description="Command following by input reconstruction."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("check", "print ranks, spectra and the trackability verdict"),
        ("run", "simulate one closed-loop run and write a trace CSV"),
        ("montecarlo", "repeat the run with seeds base+i and write mean/std CSV"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True,
                       help=f"JSON config path or bundled name ({', '.join(BUNDLED)})")
        p.add_argument("--out", help="output CSV path")
        p.add_argument("--seed", type=int, help="override noise.seed (base seed)")
        p.add_argument("--runs", type=int, help="override runs")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg.seed = args.seed
        if args.runs is not None:
            if args.runs < 1:
                raise ConfigError("--runs must be >= 1")
            cfg.runs = args.runs
        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "run":
            return cmd_run(cfg, _out_path(args, cfg, "trace", "trace"))
        return cmd_montecarlo(cfg, _out_path(args, cfg, "montecarlo", "montecarlo"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleError, UnsupportedShapeError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidInputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
