"""LQG tracking baseline: LQR state feedback around a static steady-state target."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import matcore
from .estimator import KalmanState, NoiseSpec, _covariance, kf_predict, kf_update
from .exceptions import InfeasibleError, InvalidInputError, NumericalFailureError


def lqr_gain(A, B, Qw, Rw, tol=1e-10, max_iter=10_000):
    """Infinite-horizon discrete LQR gain by iterating the Riccati recursion.

    Returns:
        tuple: ``(K, P)`` with ``u = -K x``.

    Raises:
        NumericalFailureError: if the recursion has not converged (relative
            change below ``tol``) after ``max_iter`` iterations.
    """
    P = np.array(Qw, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            BtP = B.T @ P
            K = np.linalg.solve(Rw + BtP @ B, BtP @ A)
            P_new = Qw + A.T @ P @ A - A.T @ P @ B @ K
            P_new = (P_new + P_new.T) / 2
            if not np.all(np.isfinite(P_new)):
                break
            change = np.linalg.norm(P_new - P) / max(np.linalg.norm(P_new), 1e-300)
            P = P_new
            if change < tol:
                BtP = B.T @ P
                return np.linalg.solve(Rw + BtP @ B, BtP @ A), P
    raise NumericalFailureError(f"LQR Riccati recursion did not converge in {max_iter} iterations")


class LQGController(BaseEstimator):
    """Kalman filter + LQR with steady-state target feedforward.

    At every step the target ``(x_ss, u_ss)`` solves
    ``[[A - I, B], [C, 0]] [x_ss; u_ss] = [0; y_ref]`` and the input is
    ``u = u_ss - K (x_hat - x_ss)``.

    Args:
        Q, R: Kalman design covariances.
        state_weight, input_weight: LQR weights (scalar or matrix).
        target: ``"exact"`` requires a nonsingular square target system;
            ``"lstsq"`` uses its pseudoinverse (least-squares target) instead.
    """

    def __init__(self, Q=1e-4, R=1e-4, state_weight=1.0, input_weight=1.0,
                 P0=None, x0=None, target="exact"):
        self.Q = Q
        self.R = R
        self.state_weight = state_weight
        self.input_weight = input_weight
        self.P0 = P0
        self.x0 = x0
        self.target = target

    def fit(self, model, y=None):
        if self.target not in ("exact", "lstsq"):
            raise InvalidInputError(f"target must be 'exact' or 'lstsq', got {self.target!r}")
        n, p, l = model.n, model.p, model.l
        self.model_ = model
        self.noise_ = NoiseSpec.for_model(model, self.Q, self.R)
        Qw = _covariance(self.state_weight, n, "state_weight")
        Rw = _covariance(self.input_weight, p, "input_weight")
        self.K_lqr_, self.P_lqr_ = lqr_gain(model.A, model.B, Qw, Rw)
        T = np.block([[model.A - np.eye(n), model.B], [model.C, np.zeros((l, p))]])
        rank = matcore.numerical_rank(T)
        if self.target == "exact" and (T.shape[0] != T.shape[1] or rank < T.shape[1]):
            raise InfeasibleError(
                f"steady-state target system is singular (rank {rank} of {T.shape}); "
                "use target='lstsq'"
            )
        self.target_map_ = matcore.pinv(T)[:, n:]
        return self.reset()

    def reset(self):
        check_is_fitted(self, "model_")
        self.state_ = KalmanState.initial(self.model_, self.x0, self.P0)
        self.u_prev_ = np.zeros(self.model_.p)
        self.k_ = 0
        self.y_pred_ = self.model_.C @ self.state_.x_hat
        return self

    def steady_state(self, y_ref):
        """``(x_ss, u_ss)`` for a constant output ``y_ref``."""
        check_is_fitted(self, "model_")
        z = self.target_map_ @ matcore.as_vector(y_ref, self.model_.l, "y_ref")
        return z[: self.model_.n], z[self.model_.n :]

    def step(self, y_meas, y_ref_next):
        check_is_fitted(self, "state_")
        m = self.model_
        if self.k_ > 0:
            self.state_ = kf_predict(self.state_, m, self.u_prev_, self.noise_)
        self.state_ = kf_update(self.state_, m, self.noise_, y_meas)
        x_ss, u_ss = self.steady_state(y_ref_next)
        u = u_ss - self.K_lqr_ @ (self.state_.x_hat - x_ss)
        self.y_pred_ = m.C @ (m.A @ self.state_.x_hat + m.B @ u)
        self.u_prev_ = u
        self.k_ += 1
        return u


def lqg_baseline(model, noise, weights=(1.0, 1.0), target="exact"):
    """Fitted :class:`LQGController` using ``noise`` as design covariances."""
    qw, rw = weights
    return LQGController(noise.Q, noise.R, qw, rw, target=target).fit(model)
