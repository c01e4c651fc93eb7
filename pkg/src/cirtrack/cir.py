"""Command following by input reconstruction.

Each step:

1. Kalman filter: predict with the input applied last step, update with the
   current measurement to get ``x_{k|k}``.
2. Open-loop one-step prediction ``y_pred = C A x_{k|k}``.
3. UMV gain ``L_{k+1}`` from the separate UMV covariance recursion.
4. ``u_k = B^+ L_{k+1} (y_ref_{k+1} - y_pred)``.

The state estimate comes only from the Kalman branch; the UMV recursion
only supplies the gain.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import matcore
from .estimator import KalmanState, NoiseSpec, _covariance, kf_predict, kf_update
from .exceptions import NumericalFailureError
from .reconstructor import advance_covariance, umv_gain


@dataclass(frozen=True, eq=False)
class CirState:
    kalman: KalmanState
    umv_cov: np.ndarray
    u_prev: np.ndarray
    y_pred: np.ndarray
    k: int = 0
    last_gain: np.ndarray = None

    @classmethod
    def initial(cls, model, x0=None, P0=None, umv_P0=None):
        kal = KalmanState.initial(model, x0, P0)
        umv_cov = np.eye(model.n) if umv_P0 is None else _covariance(umv_P0, model.n, "umv_P0")
        return cls(kal, umv_cov, np.zeros(model.p), model.C @ kal.x_hat)


def cir_step(state, model, noise, y_meas_k, y_ref_next, B_pinv=None):
    """Advance the controller by one sample.

    ``x0`` of the initial state is read as the prior mean of ``x_0``, so the
    Kalman prediction is skipped at ``k = 0``.

    Returns:
        tuple: ``(new_state, u_apply)``
    """
    y_ref = matcore.as_vector(y_ref_next, model.l, "y_ref_next")
    if B_pinv is None:
        B_pinv = matcore.pinv(model.B)
    kal = state.kalman
    if state.k > 0:
        kal = kf_predict(kal, model, state.u_prev, noise)
    kal = kf_update(kal, model, noise, y_meas_k)

    y_pred = model.C @ (model.A @ kal.x_hat)
    L, P_post, _ = umv_gain(advance_covariance(state.umv_cov, model, noise), model, noise)
    with np.errstate(over="ignore", invalid="ignore"):
        u = B_pinv @ (L @ (y_ref - y_pred))
    if not np.all(np.isfinite(u)):
        raise NumericalFailureError("input is no longer finite; the inversion is unstable")
    return CirState(kal, P_post, u, y_pred, state.k + 1, L), u


class CIRController(BaseEstimator):
    """CIR feedback controller for a square (or pre-squared) plant.

    Args:
        Q, R: Design covariances for both the Kalman and UMV recursions.
        P0: Initial Kalman covariance (default identity).
        x0: Prior mean of the initial state (default zero).
        umv_P0: Initial UMV covariance (default identity).

    Use ``fit(model)`` then call :meth:`step` once per sample with the
    current measurement and the reference one step ahead.
    """

    def __init__(self, Q=1e-4, R=1e-4, P0=None, x0=None, umv_P0=None):
        self.Q = Q
        self.R = R
        self.P0 = P0
        self.x0 = x0
        self.umv_P0 = umv_P0

    def fit(self, model, y=None):
        self.model_ = model
        self.noise_ = NoiseSpec.for_model(model, self.Q, self.R)
        self.B_pinv_ = matcore.pinv(model.B)
        return self.reset()

    def reset(self):
        check_is_fitted(self, "model_")
        self.state_ = CirState.initial(self.model_, self.x0, self.P0, self.umv_P0)
        return self

    def step(self, y_meas, y_ref_next):
        """Return the input to apply now, given ``y_k`` and ``y_ref_{k+1}``."""
        check_is_fitted(self, "state_")
        self.state_, u = cir_step(
            self.state_, self.model_, self.noise_, y_meas, y_ref_next, self.B_pinv_
        )
        return u

    @property
    def y_pred_(self):
        return self.state_.y_pred

    @property
    def x_hat_(self):
        return self.state_.kalman.x_hat
