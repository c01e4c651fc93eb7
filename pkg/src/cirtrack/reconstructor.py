"""Unbiased minimum-variance (UMV) input reconstruction.

The gain ``L`` is constrained so that ``L C B = B``; this makes both the
state update and the reconstructed input ``B^+ L (y - C x_pred)`` unbiased
with respect to the unknown input.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import matcore
from .estimator import NoiseSpec, _covariance
from .exceptions import InvalidInputError, NumericalFailureError, ReconstructionInfeasibleError

#: relative singular-value floor for V^T Rt^{-1} V
FEASIBILITY_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class UmvState:
    x_hat: np.ndarray
    P: np.ndarray
    V: np.ndarray = field(repr=False)
    last_gain: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initial(cls, model, x0=None, P0=None):
        x = np.zeros(model.n) if x0 is None else matcore.as_vector(x0, model.n, "x0")
        P = np.eye(model.n) if P0 is None else _covariance(P0, model.n, "P0")
        return cls(x, P, model.CB)


def advance_covariance(P, model, noise):
    """``A P A^T + Q``"""
    return model.A @ P @ model.A.T + noise.Q


def umv_gain(P_prior, model, noise):
    """Constrained gain from an already-advanced covariance ``P_{k+1|k}``.

    Returns:
        tuple: ``(L, P_post, R_tilde)``

    Raises:
        ReconstructionInfeasibleError: if ``V^T Rt^{-1} V`` is numerically
            singular, i.e. ``rank(CB) < p``.
    """
    C, B = model.C, model.B
    V = model.CB
    R_tilde = C @ P_prior @ C.T + noise.R
    R_tilde = (R_tilde + R_tilde.T) / 2
    try:
        cho = linalg.cho_factor(R_tilde, check_finite=False)
    except linalg.LinAlgError:
        raise NumericalFailureError("C P C^T + R is not positive definite") from None
    Rinv_V = linalg.cho_solve(cho, V, check_finite=False)
    G = V.T @ Rinv_V
    G = (G + G.T) / 2
    s = np.abs(np.linalg.eigvalsh(G))  # singular values of a symmetric matrix
    if s.size == 0 or s.max() == 0 or s.min() < FEASIBILITY_RTOL * s.max():
        rank = matcore.numerical_rank(V)
        why = (f"rank(CB) = {rank} < p = {model.p}" if rank < model.p
               else "C P C^T + R is nearly singular; use positive design covariances")
        raise ReconstructionInfeasibleError(f"V^T Rt^-1 V is singular ({why})")
    Pi = np.linalg.solve(G, Rinv_V.T)
    F = P_prior @ C.T
    Rinv_Ft = linalg.cho_solve(cho, F.T, check_finite=False)
    L = B @ Pi + Rinv_Ft.T @ (np.eye(model.l) - V @ Pi)
    P_post = P_prior - F @ Rinv_Ft
    P_post = (P_post + P_post.T) / 2
    return L, P_post, R_tilde


def umv_step(state, model, noise, y_next, B_pinv=None):
    """One reconstruction step from ``x_{k|k}`` and the measurement ``y_{k+1}``.

    Returns:
        tuple: ``(new_state, u_hat)`` where ``u_hat`` reconstructs ``u_k``.
    """
    y = matcore.as_vector(y_next, model.l, "y_next")
    if B_pinv is None:
        B_pinv = matcore.pinv(model.B)
    x_pred = model.A @ state.x_hat
    L, P_post, _ = umv_gain(advance_covariance(state.P, model, noise), model, noise)
    with np.errstate(over="ignore", invalid="ignore"):
        correction = L @ (y - model.C @ x_pred)
        u_hat = B_pinv @ correction
    if not (np.all(np.isfinite(correction)) and np.all(np.isfinite(u_hat))):
        raise NumericalFailureError("reconstruction is no longer finite; the inversion is unstable")
    return UmvState(x_pred + correction, P_post, state.V, L), u_hat


class UMVInputReconstructor(TransformerMixin, BaseEstimator):
    """Recover the unknown input sequence of a known plant from its outputs.

    ``transform(Y)`` maps measurements ``y_0..y_T`` (shape (T+1, l)) to the
    reconstructed inputs ``u_0..u_{T-1}`` (shape (T, p)).
    """

    def __init__(self, Q=1e-4, R=1e-4, P0=None, x0=None):
        self.Q = Q
        self.R = R
        self.P0 = P0
        self.x0 = x0

    def fit(self, model, y=None):
        self.model_ = model
        self.noise_ = NoiseSpec.for_model(model, self.Q, self.R)
        self.B_pinv_ = matcore.pinv(model.B)
        return self

    def transform(self, Y):
        check_is_fitted(self, "model_")
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if Y.ndim != 2 or Y.shape[1] != self.model_.l:
            raise InvalidInputError(f"Y must have {self.model_.l} columns")
        state = UmvState.initial(self.model_, self.x0, self.P0)
        U = np.empty((Y.shape[0] - 1, self.model_.p))
        gains = []
        for k in range(Y.shape[0] - 1):
            state, U[k] = umv_step(state, self.model_, self.noise_, Y[k + 1], self.B_pinv_)
            gains.append(state.last_gain)
        self.state_ = state
        self.gains_ = gains
        return U
