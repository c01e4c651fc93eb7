"""Tools for running CIR on non-square plants.

* ``l < p``: square the plant with an input map ``N`` (``B~ = B N``) and lift
  the controller output back with ``u = N u~``.
* ``l > p``: either project the reference onto the reachable output space
  ``range(M_r)``, or drop ``l - p`` outputs.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from . import matcore
from .exceptions import InfeasibleError, InvalidInputError
from .model import StateSpaceModel


@dataclass(frozen=True, eq=False)
class InputTransform:
    N: np.ndarray
    model_tilde: StateSpaceModel


def make_input_transform(model):
    """Square an ``l < p`` plant with ``N = (CB)^+``.

    Raises:
        InfeasibleError: if ``rank(CB) < l``.
    """
    if model.l >= model.p:
        raise InvalidInputError(f"input squaring needs l < p (l={model.l}, p={model.p})")
    V = model.CB
    rank = matcore.numerical_rank(V)
    if rank < model.l:
        raise InfeasibleError(f"rank(CB) = {rank} < l = {model.l}; cannot square the inputs")
    N = matcore.pinv(V)
    return InputTransform(N, model.with_input_matrix(model.B @ N))


def lift_input(transform, u_tilde):
    """Map a squared-system input back to the original plant: ``u = N u~``."""
    u = matcore.as_vector(u_tilde, transform.N.shape[1], "u_tilde")
    return transform.N @ u


@dataclass(frozen=True, eq=False)
class BatchMatrices:
    r: int
    Gamma_r: np.ndarray
    M_r: np.ndarray


def batch_matrices(model, r):
    """Stacked maps with ``[y_1; ...; y_r] = Gamma_r x_0 + M_r [u_0; ...; u_{r-1}]``."""
    r = int(r)
    if r < 1:
        raise InvalidInputError(f"horizon r must be >= 1, got {r}")
    A, B, C = model.A, model.B, model.C
    n, p, l = model.n, model.p, model.l
    Gamma = np.empty((r * l, n))
    markov = np.empty((r, l, p))  # C A^i B
    CAi = C.copy()
    for i in range(r):
        markov[i] = CAi @ B
        CAi = CAi @ A
        Gamma[i * l : (i + 1) * l] = CAi
    M = np.zeros((r * l, r * p))
    for i in range(r):
        for j in range(i + 1):
            M[i * l : (i + 1) * l, j * p : (j + 1) * p] = markov[i - j]
    return BatchMatrices(r, Gamma, M)


def _range_basis(M):
    # M (M^T M)^+ M^T = U_k U_k^T; working from the SVD of M itself avoids
    # squaring its condition number
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    k = int(np.sum(s > max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)))
    return U[:, :k]


def projection_matrix(M):
    """Orthogonal projector ``M (M^T M)^+ M^T`` onto ``range(M)``."""
    U = _range_basis(matcore.as_matrix(M, "M_r"))
    return U @ U.T


def project_reference(Y_ref, M):
    """Orthogonal projection of a stacked reference onto ``range(M_r)``."""
    M = matcore.as_matrix(M, "M_r")
    Y = matcore.as_vector(Y_ref, M.shape[0], "Y_ref")
    U = _range_basis(M)
    return U @ (U.T @ Y)


def project_reference_samples(model, samples, x0=None):
    """Replace rows ``1..`` of a (T+1, l) reference with their projection.

    The free response ``Gamma_r x0`` is removed before projecting and added
    back after, so ``x0 = 0`` reduces to :func:`project_reference`. Row 0 is
    the reference at the initial time and is left unchanged.
    """
    samples = np.asarray(samples, dtype=float)
    r = samples.shape[0] - 1
    if r < 1:
        return samples.copy()
    bm = batch_matrices(model, r)
    free = np.zeros(r * model.l) if x0 is None else bm.Gamma_r @ matcore.as_vector(x0, model.n)
    Y = samples[1:].reshape(-1) - free
    out = samples.copy()
    out[1:] = (project_reference(Y, bm.M_r) + free).reshape(r, model.l)
    return out


def drop_outputs(model, keep):
    """Keep only the output rows listed in ``keep`` (0-based indices).

    Raises:
        InfeasibleError: if the reduced ``C B`` does not have rank ``p``.
    """
    keep = [int(i) for i in keep]
    if len(set(keep)) != len(keep):
        raise InvalidInputError(f"duplicate output indices in {keep}")
    if any(i < 0 or i >= model.l for i in keep):
        raise InvalidInputError(f"output indices {keep} out of range 0..{model.l - 1}")
    if len(keep) != model.p:
        raise InvalidInputError(f"must keep exactly p = {model.p} outputs, got {len(keep)}")
    reduced = model.with_output_rows(keep)
    rank = matcore.numerical_rank(reduced.CB)
    if rank < model.p:
        raise InfeasibleError(
            f"rank(C_keep B) = {rank} < p = {model.p} with outputs {keep}"
        )
    return reduced


class LiftedController(BaseEstimator):
    """Run a square-plant controller on an ``l < p`` plant.

    ``fit`` squares the plant with :func:`make_input_transform`, fits a clone
    of ``controller`` on the squared model, and :meth:`step` lifts its output
    through ``N``.
    """

    def __init__(self, controller):
        self.controller = controller

    def fit(self, model, y=None):
        self.transform_ = make_input_transform(model)
        self.controller_ = clone(self.controller).fit(self.transform_.model_tilde)
        return self

    def reset(self):
        check_is_fitted(self, "controller_")
        self.controller_.reset()
        return self

    def step(self, y_meas, y_ref_next):
        return lift_input(self.transform_, self.controller_.step(y_meas, y_ref_next))

    @property
    def y_pred_(self):
        return self.controller_.y_pred_
