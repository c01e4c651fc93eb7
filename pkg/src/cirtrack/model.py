"""Discrete LTI plant representation and the trackability checks."""

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matcore
from .exceptions import InvalidInputError


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Discrete-time plant ``x+ = A x + B u``, ``y = C x`` (no feedthrough).

    Args:
        A (array_like): n x n state matrix.
        B (array_like): n x p input matrix.
        C (array_like): l x n output matrix.
        dt (float): Sampling period in seconds; 0 means unit-step discrete.

    Matrices are copied and made read-only, so a model can be shared freely
    between concurrent simulations.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float = 0.0

    def __post_init__(self):
        A = matcore.as_matrix(self.A, "A")
        B = matcore.as_matrix(self.B, "B")
        C = matcore.as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidInputError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise InvalidInputError(f"B must have {n} rows, got shape {B.shape}")
        if C.shape[1] != n:
            if C.shape[0] == n and C.shape[1] == 1:
                C = C.T  # a bare row vector was promoted to a column
            else:
                raise InvalidInputError(f"C must have {n} columns, got shape {C.shape}")
        dt = float(self.dt)
        if not np.isfinite(dt) or dt < 0:
            raise InvalidInputError(f"dt must be >= 0, got {self.dt}")
        for name, M in (("A", A), ("B", B), ("C", C)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        object.__setattr__(self, "dt", dt)
        rank_b = matcore.numerical_rank(B)
        if rank_b < B.shape[1]:
            warnings.warn(
                f"rank(B) = {rank_b} < p = {B.shape[1]}: one or more inputs are redundant",
                stacklevel=3,
            )

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def l(self):  # noqa: E743
        return self.C.shape[0]

    @property
    def is_square(self):
        return self.l == self.p

    @property
    def CB(self):
        return self.C @ self.B

    @classmethod
    def from_continuous(cls, Ac, Bc, C, dt):
        """Build a discrete model by ZOH-discretizing ``(Ac, Bc)`` at ``dt``."""
        Ad, Bd = matcore.zoh_discretize(Ac, Bc, dt)
        return cls(Ad, Bd, C, dt)

    @classmethod
    def from_dict(cls, d):
        """Parse the JSON model layout: keys ``A``, ``B``, ``C``, ``dt`` and
        optional ``continuous``."""
        missing = [k for k in ("A", "B", "C") if k not in d]
        if missing:
            raise InvalidInputError(f"model: missing key(s) {missing}")
        dt = float(d.get("dt", 0.0))
        if d.get("continuous", False):
            return cls.from_continuous(d["A"], d["B"], d["C"], dt)
        return cls(d["A"], d["B"], d["C"], dt)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(), "dt": self.dt}

    def with_output_rows(self, rows):
        return StateSpaceModel(self.A, self.B, self.C[list(rows), :], self.dt)

    def with_input_matrix(self, B):
        return StateSpaceModel(self.A, B, self.C, self.dt)

    def fingerprint(self):
        """Short content hash used to tag simulation traces."""
        h = hashlib.sha256()
        for M in (self.A, self.B, self.C):
            h.update(np.ascontiguousarray(M).tobytes())
            h.update(repr(M.shape).encode())
        h.update(repr(self.dt).encode())
        return h.hexdigest()[:16]

    def __repr__(self):
        return f"StateSpaceModel(n={self.n}, p={self.p}, l={self.l}, dt={self.dt})"


@dataclass
class FeasibilityReport:
    rank_B: int
    rank_CB: int
    ctrb_rank: int
    obsv_rank: int
    is_square: bool
    is_trackable: bool
    eigenvalues: np.ndarray = field(repr=False)
    zeros: Optional[np.ndarray] = None
    min_phase: Optional[bool] = None

    def render(self):
        """Human-readable multi-line summary."""
        lines = [
            f"rank(B)      : {self.rank_B}",
            f"rank(CB)     : {self.rank_CB}",
            f"ctrb rank    : {self.ctrb_rank}",
            f"obsv rank    : {self.obsv_rank}",
            f"square       : {'yes' if self.is_square else 'no'}",
            f"trackable    : {'yes' if self.is_trackable else 'no'}",
            f"eigenvalues  : {format_spectrum(self.eigenvalues)}",
        ]
        if self.zeros is not None:
            lines.append(f"zeros        : {format_spectrum(self.zeros)}")
        mp = {True: "yes", False: "no", None: "unknown"}[self.min_phase]
        lines.append(f"min phase    : {mp}")
        return "\n".join(lines)


def format_spectrum(values, digits=4):
    if values is None or len(values) == 0:
        return "{}"
    parts = []
    for z in values:
        if abs(z.imag) < 10 ** (-digits - 2):
            parts.append(f"{z.real:.{digits}f}")
        else:
            sign = "+" if z.imag >= 0 else "-"
            parts.append(f"{z.real:.{digits}f}{sign}{abs(z.imag):.{digits}f}i")
    return "{" + ", ".join(parts) + "}"


def check_feasibility(model, margin=1e-9):
    """Evaluate the rank, trackability and phase conditions of ``model``.

    A model is reported trackable iff it is square and ``rank(CB) = l``.
    Zeros and the minimum-phase verdict are only computed on that path;
    otherwise ``min_phase`` is ``None``.
    """
    rank_CB = matcore.numerical_rank(model.CB)
    trackable = model.is_square and rank_CB == model.l
    zeros = None
    min_phase = None
    if trackable:
        zeros = matcore.invariant_zeros(model)
        min_phase = bool(np.all(np.abs(zeros) < 1.0 - margin))
    return FeasibilityReport(
        rank_B=matcore.numerical_rank(model.B),
        rank_CB=rank_CB,
        ctrb_rank=matcore.ctrb_rank(model.A, model.B),
        obsv_rank=matcore.obsv_rank(model.A, model.C),
        is_square=model.is_square,
        is_trackable=trackable,
        eigenvalues=matcore.eigenvalues(model.A),
        zeros=zeros,
        min_phase=min_phase,
    )


def reference_step(model, x_ref, u_ref):
    """Noise-free propagation of the reference system.

    Returns:
        tuple: ``(x_ref_next, y_ref_next)``
    """
    x = matcore.as_vector(x_ref, model.n, "x_ref")
    u = matcore.as_vector(u_ref, model.p, "u_ref")
    x_next = model.A @ x + model.B @ u
    return x_next, model.C @ x_next


# -- bundled plants ---------------------------------------------------------


def spring_damper_model(dt=0.05, m1=1.0, m2=1.0, k1=4.0, k2=8.0, b1=2.0, b2=4.0):
    """Two-mass spring-damper with force inputs and velocity outputs, ZOH at ``dt``."""
    Ac = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [-(k1 + k2) / m1, -(b1 + b2) / m1, k2 / m1, b2 / m1],
            [0.0, 0.0, 0.0, 1.0],
            [k2 / m2, b2 / m2, -k2 / m2, -b2 / m2],
        ]
    )
    # both force channels are scaled by 1/m2 in the published model
    Bc = np.array([[0.0, 0.0], [1.0 / m2, 0.0], [0.0, 0.0], [0.0, 1.0 / m2]])
    C = np.array([[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    return StateSpaceModel.from_continuous(Ac, Bc, C, dt)


def rc_circuit_continuous(R1=1e3, R2=1e3, R3=1e3, C1=1e-6, C2=330e-6):
    """Continuous ``(Ac, Bc, C)`` of the two-capacitor MIMO RC network."""
    Ac = np.array(
        [
            [-(R1 + R3) / (C1 * R1 * R3), 1.0 / (C1 * R3)],
            [1.0 / (C2 * R3), -(R2 + R3) / (C2 * R2 * R3)],
        ]
    )
    Bc = np.array([[1.0 / (C1 * R1), 0.0], [0.0, 1.0 / (C2 * R2)]])
    return Ac, Bc, np.eye(2)


def rc_circuit_model(dt=0.1, **components):
    """MIMO RC network, ZOH-discretized at ``dt`` (capacitor voltages as outputs)."""
    Ac, Bc, C = rc_circuit_continuous(**components)
    return StateSpaceModel.from_continuous(Ac, Bc, C, dt)


def nonsquare_demo_model():
    """Four-state, single-input, two-output discrete system (l > p)."""
    A = np.array(
        [
            [0.1, -0.7, 0.0, 0.0],
            [0.7, 0.2, -0.7, 0.0],
            [0.0, 0.7, 0.3, -0.7],
            [0.0, 0.0, 0.7, 0.4],
        ]
    )
    B = np.array([[0.0], [1.0], [0.0], [0.0]])
    C = np.array([[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    return StateSpaceModel(A, B, C)
