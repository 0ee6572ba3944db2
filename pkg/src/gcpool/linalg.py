"""Dense symmetric-matrix primitives.

Everything here works on float64 numpy arrays.  Functions that take a single
matrix also accept a stack of matrices with arbitrary leading dimensions, so
the pooling layers can decompose a whole mini-batch in one call.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

DEFAULT_TOL = 1e-12
DEFAULT_MAX_SWEEPS = 100


class ShapeError(ValueError):
    pass


class EigenSolverError(RuntimeError):
    """Raised when the Jacobi iteration exhausts its sweep budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (off-diagonal residual {residual:.3e})")
        self.residual = residual


class EigenPair(NamedTuple):
    U: np.ndarray
    lam: np.ndarray


def _check_square(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ShapeError(f"expected square matrix, got shape {A.shape}")
    return A


def sym_part(A: np.ndarray) -> np.ndarray:
    """Return ``(A + A^T) / 2``."""
    A = _check_square(A)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def diag_part(A: np.ndarray) -> np.ndarray:
    """Zero every off-diagonal entry of ``A``."""
    A = _check_square(A)
    out = np.zeros_like(A)
    idx = np.arange(A.shape[-1])
    out[..., idx, idx] = A[..., idx, idx]
    return out


def centering_matrix(n: int) -> np.ndarray:
    """The scaled centering matrix ``(1/n) (I - (1/n) 1 1^T)``."""
    if n < 1:
        raise ValueError(f"centering matrix needs n >= 1, got {n}")
    return (np.eye(n) - np.full((n, n), 1.0 / n)) / n


def is_symmetric(A: np.ndarray) -> bool:
    A = np.asarray(A, dtype=np.float64)
    scale = 1.0 + np.max(np.abs(A), initial=0.0)
    return bool(np.max(np.abs(A - np.swapaxes(A, -1, -2)), initial=0.0) <= 1e-12 * scale)


def _max_offdiag(A: np.ndarray) -> np.ndarray:
    n = A.shape[-1]
    off = np.abs(A).copy()
    off[..., np.arange(n), np.arange(n)] = 0.0
    return off.reshape(off.shape[0], -1).max(axis=1, initial=0.0)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # first entry with magnitude above the noise floor is made positive
    mag = np.abs(U)
    floor = 1e-10 * mag.max(axis=-2, keepdims=True)
    first = np.argmax(mag > floor, axis=-2)
    lead = np.take_along_axis(U, first[..., None, :], axis=-2)
    return U * np.where(lead < 0, -1.0, 1.0)


def sym_eig(A: np.ndarray, tol: float = DEFAULT_TOL,
            max_sweeps: int = DEFAULT_MAX_SWEEPS) -> EigenPair:
    """Eigendecomposition of a symmetric matrix (or stack) by cyclic Jacobi.

    Rotations are applied in fixed row-major ``(p, q)`` order.  A matrix is
    considered converged once its largest off-diagonal magnitude drops to
    ``tol * ||A||_F``; converged members of a stack receive identity rotations
    so each matrix's result is independent of the batch it arrives in.

    Returns eigenvalues sorted in descending order and eigenvectors as columns
    of ``U``, each column signed so its first non-negligible entry is positive.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = _check_square(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if not is_symmetric(A):
        raise ValueError("sym_eig needs a symmetric matrix")
    batch_shape = A.shape[:-2]
    n = A.shape[-1]
    W = sym_part(A).reshape(-1, n, n).copy()
    V = np.broadcast_to(np.eye(n), W.shape).copy()
    # scaled Frobenius norm, safe against underflow of tiny entries
    big = np.abs(W).max(axis=(1, 2))
    unit = W / np.where(big > 0, big, 1.0)[:, None, None]
    thresh = tol * big * np.sqrt(np.einsum("bij,bij->b", unit, unit))

    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    for _ in range(max_sweeps):
        active = _max_offdiag(W) > thresh
        if not active.any():
            break
        for p, q in pairs:
            apq = W[:, p, q]
            rotate = active & (apq != 0.0)
            if not rotate.any():
                continue
            safe = np.where(rotate, apq, 1.0)
            with np.errstate(over="ignore"):
                theta = (W[:, q, q] - W[:, p, p]) / (2.0 * safe)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            # an entry this small against the diagonal gap is already converged
            negligible = rotate & (t == 0.0)
            W[negligible, p, q] = 0.0
            W[negligible, q, p] = 0.0
            t = np.where(rotate, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c3 = c[:, None]
            s3 = s[:, None]
            cp, cq = W[:, :, p].copy(), W[:, :, q].copy()
            W[:, :, p] = c3 * cp - s3 * cq
            W[:, :, q] = s3 * cp + c3 * cq
            rp, rq = W[:, p, :].copy(), W[:, q, :].copy()
            W[:, p, :] = c3 * rp - s3 * rq
            W[:, q, :] = s3 * rp + c3 * rq
            vp, vq = V[:, :, p].copy(), V[:, :, q].copy()
            V[:, :, p] = c3 * vp - s3 * vq
            V[:, :, q] = s3 * vp + c3 * vq
    else:
        resid = _max_offdiag(W)
        if np.any(resid > thresh):
            raise EigenSolverError(
                f"Jacobi did not converge in {max_sweeps} sweeps", float(resid.max()))

    lam = np.diagonal(W, axis1=-2, axis2=-1).copy()
    order = np.argsort(-lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    V = _fix_signs(V)
    return EigenPair(V.reshape(batch_shape + (n, n)), lam.reshape(batch_shape + (n,)))
