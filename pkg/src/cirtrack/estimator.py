"""Kalman filter for the plant state, driven by the inputs actually applied."""

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import matcore
from .exceptions import InvalidInputError, NumericalFailureError

#: innovation covariances worse conditioned than this are rejected
MAX_INNOVATION_COND = 1e12


def _covariance(M, size, name, definite=False):
    M = matcore.as_matrix(M, name)
    if M.shape == (1, 1) and size != 1:
        M = M[0, 0] * np.eye(size)
    elif M.shape[0] == size and M.shape[1] == 1 and size != 1:
        M = np.diag(M[:, 0])
    if M.shape != (size, size):
        raise InvalidInputError(f"{name}: expected {size}x{size}, got {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12, rtol=1e-9):
        raise InvalidInputError(f"{name}: not symmetric")
    w = np.linalg.eigvalsh(M)
    floor = 1e-12 * max(1.0, abs(w).max())
    if w.min() < -floor:
        raise InvalidInputError(f"{name}: not positive semidefinite (min eig {w.min():.3g})")
    if definite and w.min() <= 0:
        raise InvalidInputError(f"{name}: must be positive definite")
    return (M + M.T) / 2


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Process covariance ``Q`` (n x n), measurement covariance ``R`` (l x l)
    and the seed of the noise stream.

    Scalars and diagonals are expanded with :meth:`for_model`.
    """

    Q: np.ndarray
    R: np.ndarray
    seed: int = 0

    @classmethod
    def for_model(cls, model, Q=0.0, R=0.0, seed=0):
        return cls(_covariance(Q, model.n, "Q"), _covariance(R, model.l, "R"), int(seed))

    def __post_init__(self):
        Q = matcore.as_matrix(self.Q, "Q")
        R = matcore.as_matrix(self.R, "R")
        object.__setattr__(self, "Q", _covariance(Q, Q.shape[0], "Q"))
        object.__setattr__(self, "R", _covariance(R, R.shape[0], "R"))
        if int(self.seed) < 0:
            raise InvalidInputError("seed must be a non-negative integer")

    def check(self, model):
        if self.Q.shape != (model.n, model.n) or self.R.shape != (model.l, model.l):
            raise InvalidInputError(
                f"noise shapes Q{self.Q.shape}, R{self.R.shape} do not fit "
                f"n={model.n}, l={model.l}"
            )
        return self

    @cached_property
    def process_factor(self):
        """``S`` with ``S S^T = Q``; zero where Q is zero."""
        return _sqrt_psd(self.Q)

    @cached_property
    def measurement_factor(self):
        return _sqrt_psd(self.R)

    @property
    def is_zero(self):
        return not (np.any(self.Q) or np.any(self.R))


def _sqrt_psd(M):
    w, V = np.linalg.eigh(M)
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Filter estimate and covariance. ``last_gain``/``last_innovation_cov``
    hold ``K_k`` and ``S_k`` from the latest update (``None`` before it)."""

    x_hat: np.ndarray
    P: np.ndarray
    last_gain: np.ndarray = field(default=None, repr=False)
    last_innovation_cov: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initial(cls, model, x0=None, P0=None):
        x = np.zeros(model.n) if x0 is None else matcore.as_vector(x0, model.n, "x0")
        P = np.eye(model.n) if P0 is None else _covariance(P0, model.n, "P0")
        return cls(x, P)


def kf_predict(state, model, u_applied, noise):
    """Time update: ``x <- A x + B u``, ``P <- A P A^T + Q``."""
    u = matcore.as_vector(u_applied, model.p, "u_applied")
    if state.x_hat.shape != (model.n,):
        raise InvalidInputError(f"state dimension {state.x_hat.shape} does not match n={model.n}")
    A = model.A
    return replace(
        state,
        x_hat=A @ state.x_hat + model.B @ u,
        P=A @ state.P @ A.T + noise.Q,
    )


def kf_update(state, model, noise, y_meas):
    """Measurement update with innovation covariance ``S = C P C^T + R``.

    The gain is obtained from a Cholesky solve of ``S`` and the posterior
    covariance ``(I - K C) P`` is re-symmetrized.

    Raises:
        NumericalFailureError: if ``S`` is singular or too ill-conditioned.
    """
    y = matcore.as_vector(y_meas, model.l, "y_meas")
    C = model.C
    P = state.P
    S = C @ P @ C.T + noise.R
    S = (S + S.T) / 2
    w = np.linalg.eigvalsh(S)
    if not w[0] > 0 or w[-1] > MAX_INNOVATION_COND * w[0]:
        raise NumericalFailureError("innovation covariance S is singular or ill-conditioned")
    PCt = P @ C.T
    try:
        cho = linalg.cho_factor(S, check_finite=False)
    except linalg.LinAlgError:
        raise NumericalFailureError("innovation covariance S is not positive definite") from None
    K = linalg.cho_solve(cho, PCt.T, check_finite=False).T
    x = state.x_hat + K @ (y - C @ state.x_hat)
    P = (np.eye(model.n) - K @ C) @ P
    P = (P + P.T) / 2
    return KalmanState(x, P, K, S)


class KalmanFilter(BaseEstimator):
    """Kalman state estimator in estimator form.

    Args:
        Q, R: Process and measurement covariances (scalar, diagonal or full).
        P0: Initial covariance, default identity.
        x0: Initial estimate (prior mean of ``x_0``), default zero.

    Example:
        >>> kf = KalmanFilter(Q=1e-4, R=1e-4).fit(model)
        >>> X_hat = kf.filter(U, Y)
    """

    def __init__(self, Q=1e-4, R=1e-4, P0=None, x0=None):
        self.Q = Q
        self.R = R
        self.P0 = P0
        self.x0 = x0

    def fit(self, model, y=None):
        self.model_ = model
        self.noise_ = NoiseSpec.for_model(model, self.Q, self.R)
        self.reset()
        return self

    def reset(self):
        self.state_ = KalmanState.initial(self.model_, self.x0, self.P0)
        self.n_updates_ = 0
        return self

    def step(self, y_meas, u_prev=None):
        """Advance with the previously applied input, then update with ``y_meas``."""
        check_is_fitted(self, "state_")
        if self.n_updates_ > 0:
            self.state_ = kf_predict(self.state_, self.model_, u_prev, self.noise_)
        self.state_ = kf_update(self.state_, self.model_, self.noise_, y_meas)
        self.n_updates_ += 1
        return self.state_.x_hat

    def filter(self, U, Y):
        """Filtered estimates ``x_{k|k}`` for ``k = 0..T``.

        Args:
            U (array_like): (T, p) applied inputs ``u_0..u_{T-1}``.
            Y (array_like): (T+1, l) measurements ``y_0..y_T``.
        """
        check_is_fitted(self, "model_")
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        U = np.asarray(U, dtype=float).reshape(-1, self.model_.p)
        if U.shape[0] != Y.shape[0] - 1:
            raise InvalidInputError("U must have one row fewer than Y")
        self.reset()
        out = np.empty((Y.shape[0], self.model_.n))
        for k, y in enumerate(Y):
            out[k] = self.step(y, U[k - 1] if k else None)
        return out
