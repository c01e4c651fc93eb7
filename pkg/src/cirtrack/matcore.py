"""Dense linear-algebra primitives used by the filters and controllers.

Everything here is a pure function of its arguments. Rank decisions and
pseudoinverses share one SVD cutoff rule::

    tol = max(rows, cols) * eps * sigma_max     (when tol == 0)
"""

import numpy as np
from scipy import linalg

from .exceptions import InvalidInputError, UnsupportedShapeError

#: generalized eigenvalues above this magnitude are treated as infinite
INFINITE_ZERO_THRESHOLD = 1e8


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array.

    Scalars become 1x1 and vectors become columns.
    """
    try:
        arr = np.array(M, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name}: not a real matrix ({exc})") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise InvalidInputError(f"{name}: expected 2-D array, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: contains non-finite entries")
    return arr


def as_vector(v, size=None, name="vector"):
    """Return ``v`` as a finite 1-D float array, optionally of a fixed size."""
    arr = np.array(v, dtype=float).reshape(-1)
    if size is not None and arr.shape[0] != size:
        raise InvalidInputError(f"{name}: expected length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: contains non-finite entries")
    return arr


def _cutoff(s, shape, tol):
    if tol < 0:
        raise InvalidInputError("tol must be >= 0")
    if tol == 0:
        smax = s[0] if s.size else 0.0
        return max(shape) * np.finfo(float).eps * smax
    return tol


def pinv(M, tol=0.0):
    """Moore-Penrose pseudoinverse via the SVD.

    Args:
        M (array_like): Real matrix.
        tol (float): Singular values at or below ``tol`` are discarded. ``0``
            selects the automatic cutoff.

    Returns:
        np.ndarray: ``M^+`` with shape ``M.T.shape``.
    """
    M = as_matrix(M, "M")
    if M.size == 0:
        return np.zeros(M.T.shape)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    cut = _cutoff(s, M.shape, tol)
    keep = s > cut
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def numerical_rank(M, tol=0.0):
    """Number of singular values of ``M`` above the cutoff."""
    M = as_matrix(M, "M")
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > _cutoff(s, M.shape, tol)))


def zoh_discretize(Ac, Bc, dt):
    """Zero-order-hold discretization of ``dx/dt = Ac x + Bc u``.

    Uses the exponential of the augmented matrix ``[[Ac, Bc], [0, 0]] * dt``;
    the top blocks are ``Ad`` and ``Bd``.

    Returns:
        tuple: ``(Ad, Bd)``
    """
    Ac = as_matrix(Ac, "Ac")
    Bc = as_matrix(Bc, "Bc")
    n = Ac.shape[0]
    if Ac.shape != (n, n):
        raise InvalidInputError(f"Ac must be square, got {Ac.shape}")
    if Bc.shape[0] != n:
        raise InvalidInputError(f"Bc must have {n} rows, got {Bc.shape[0]}")
    if not np.isfinite(dt) or dt <= 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    p = Bc.shape[1]
    aug = np.zeros((n + p, n + p))
    aug[:n, :n] = Ac
    aug[:n, n:] = Bc
    E = linalg.expm(aug * dt)
    return E[:n, :n].copy(), E[:n, n:].copy()


def _sort_spectrum(w):
    w = np.asarray(w, dtype=complex)
    # round before sorting so conjugate pairs stay adjacent
    order = np.lexsort((w.imag, np.round(np.abs(w.imag), 12), np.round(w.real, 12)))
    return w[order]


def eigenvalues(A):
    """Eigenvalues of a square real matrix, sorted by real then imaginary part."""
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"A must be square, got {A.shape}")
    return _sort_spectrum(np.linalg.eigvals(A))


def invariant_zeros(model):
    """Finite invariant zeros of a square system.

    Solves the generalized eigenproblem of the Rosenbrock pencil
    ``[[A - zI, B], [C, 0]]`` and drops infinite eigenvalues.

    Args:
        model (StateSpaceModel): System with as many outputs as inputs.

    Returns:
        np.ndarray: complex array of zeros (possibly empty).
    """
    A, B, C = model.A, model.B, model.C
    n, p, l = model.n, model.p, model.l
    if l != p:
        raise UnsupportedShapeError(
            f"invariant zeros are only computed for square systems (l={l}, p={p})"
        )
    pencil = np.block([[A, B], [C, np.zeros((l, p))]])
    E = np.zeros_like(pencil)
    E[:n, :n] = np.eye(n)
    w = linalg.eigvals(pencil, E, homogeneous_eigvals=True)
    alpha, beta = w
    finite = np.abs(beta) > np.abs(alpha) / INFINITE_ZERO_THRESHOLD
    finite &= np.abs(beta) > 0
    z = alpha[finite] / beta[finite]
    z = z[np.abs(z) <= INFINITE_ZERO_THRESHOLD]
    # real pencils give exact conjugate pairs up to rounding; snap tiny imaginary parts
    z = np.where(np.abs(z.imag) < 1e-12 * np.maximum(1.0, np.abs(z)), z.real + 0j, z)
    return _sort_spectrum(z)


def ctrb_matrix(A, B):
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n:
        raise InvalidInputError(f"inconsistent shapes A{A.shape}, B{B.shape}")
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def obsv_matrix(A, C):
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise InvalidInputError(f"inconsistent shapes A{A.shape}, C{C.shape}")
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def ctrb_rank(A, B, tol=0.0):
    """Numerical rank of ``[B, AB, ..., A^{n-1} B]``."""
    return numerical_rank(ctrb_matrix(A, B), tol)


def obsv_rank(A, C, tol=0.0):
    """Numerical rank of ``[C; CA; ...; CA^{n-1}]``."""
    return numerical_rank(obsv_matrix(A, C), tol)
