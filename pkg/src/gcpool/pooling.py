"""Global average pooling and global covariance pooling heads.

Feature matrices are ``(..., N, D)`` arrays: ``N`` spatial positions by ``D``
channels, with any number of leading batch dimensions.  GCP computes the
sample covariance ``Sigma = X^T J X`` and normalizes it with the matrix square
root obtained from an eigendecomposition.  The backward pass is the exact
eigendecomposition gradient; a trimmed variant is kept for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError, centering_matrix, diag_part, sym_eig, sym_part

SQRT2 = np.sqrt(2.0)


def gap_forward(X: np.ndarray, scale: float | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if scale is None:
        scale = 1.0 / X.shape[-2]
    return scale * X.sum(axis=-2)


def gap_backward(gout: np.ndarray, n: int, scale: float | None = None) -> np.ndarray:
    gout = np.asarray(gout, dtype=np.float64)
    if scale is None:
        scale = 1.0 / n
    shape = gout.shape[:-1] + (n, gout.shape[-1])
    return np.broadcast_to(scale * gout[..., None, :], shape).copy()


def covariance(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Sigma, J)`` with ``Sigma = X^T J X``."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[-2]
    J = centering_matrix(n)
    # J = C / N with C idempotent, so X^T J X = Xc^T Xc / N for centered Xc
    Xc = X - X.mean(axis=-2, keepdims=True)
    Sigma = sym_part(np.swapaxes(Xc, -1, -2) @ Xc) / n
    return Sigma, J


def default_eps_lambda(lam: np.ndarray) -> np.ndarray:
    return 1e-10 * np.maximum(lam[..., :1], 1e-300)


def matrix_sqrt(Sigma: np.ndarray):
    """Square root ``U diag(max(lam, 0))^{1/2} U^T``; also returns the eigenpair."""
    eig = sym_eig(Sigma)
    U, lam = eig
    root = np.sqrt(np.maximum(lam, 0.0))
    Z = sym_part((U * root[..., None, :]) @ np.swapaxes(U, -1, -2))
    return Z, eig


def build_K(lam: np.ndarray, eps_gap=None) -> np.ndarray:
    """Reciprocal eigen-gap mask, ``K[i, j] = 1 / (lam[i] - lam[j])``.

    Entries with ``|lam[i] - lam[j]| <= eps_gap`` (including the diagonal) are 0.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if eps_gap is None:
        eps_gap = 1e-10 * (1.0 + lam[..., :1])
    eps_gap = np.asarray(eps_gap, dtype=np.float64)[..., None]
    diff = lam[..., :, None] - lam[..., None, :]
    keep = np.abs(diff) > eps_gap
    return np.where(keep, 1.0 / np.where(keep, diff, 1.0), 0.0)


def vectorize_sym(Z: np.ndarray) -> np.ndarray:
    """Upper triangle in row-major order, off-diagonals scaled by sqrt(2).

    The scaling makes the map an isometry: vector dot products equal matrix
    Frobenius inner products.
    """
    Z = np.asarray(Z, dtype=np.float64)
    d = Z.shape[-1]
    iu, ju = np.triu_indices(d)
    w = np.where(iu == ju, 1.0, SQRT2)
    return Z[..., iu, ju] * w


def devectorize_grad(g: np.ndarray, d: int | None = None) -> np.ndarray:
    """Adjoint of :func:`vectorize_sym`; maps a vector back to a symmetric matrix."""
    g = np.asarray(g, dtype=np.float64)
    if d is None:
        d = int(round((np.sqrt(8 * g.shape[-1] + 1) - 1) / 2))
    if d * (d + 1) // 2 != g.shape[-1]:
        raise ShapeError(f"length {g.shape[-1]} is not a triangular number")
    iu, ju = np.triu_indices(d)
    vals = np.where(iu == ju, g, g / SQRT2)
    out = np.zeros(g.shape[:-1] + (d, d))
    out[..., iu, ju] = vals
    out[..., ju, iu] = vals
    return out


# the isometry is orthogonal onto symmetric matrices, so the inverse is the adjoint
devectorize_sym = devectorize_grad


@dataclass(frozen=True)
class GcpContext:
    X: np.ndarray
    J: np.ndarray
    Sigma: np.ndarray
    U: np.ndarray
    lam: np.ndarray
    K: np.ndarray
    Z: np.ndarray
    eps_lambda: np.ndarray
    clamped: np.ndarray  # bool mask, eigenvalues at or below eps_lambda

    @property
    def dim(self) -> int:
        return self.X.shape[-1]

    def inv_sqrt_half(self) -> np.ndarray:
        """``1/2 * lam^{-1/2}`` with clamped eigenvalues contributing 0."""
        safe = np.where(self.clamped, 1.0, self.lam)
        return np.where(self.clamped, 0.0, 0.5 / np.sqrt(safe))


def gcp_context(X: np.ndarray, eps_lambda=None, eps_gap=None) -> GcpContext:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[-2] < 1 or X.shape[-1] < 1:
        raise ShapeError(f"feature matrix must be (..., N, D), got {X.shape}")
    Sigma, J = covariance(X)
    Z, (U, lam) = matrix_sqrt(Sigma)
    if eps_lambda is None:
        eps_lambda = default_eps_lambda(lam)
    eps_lambda = np.broadcast_to(np.asarray(eps_lambda, dtype=np.float64),
                                 lam.shape[:-1] + (1,))
    clamped = lam <= eps_lambda
    K = build_K(lam, eps_gap)
    dead = clamped[..., :, None] | clamped[..., None, :]
    K = np.where(dead, 0.0, K)
    return GcpContext(X, J, Sigma, U, lam, K, Z, eps_lambda, clamped)


def gcp_forward(X: np.ndarray, eps_lambda=None, eps_gap=None):
    ctx = gcp_context(X, eps_lambda, eps_gap)
    return vectorize_sym(ctx.Z), ctx


def _check_dz(ctx: GcpContext, dZ: np.ndarray) -> np.ndarray:
    dZ = np.asarray(dZ, dtype=np.float64)
    if dZ.shape[-2:] != ctx.Z.shape[-2:]:
        raise ShapeError(f"dZ shape {dZ.shape} does not match Z shape {ctx.Z.shape}")
    return sym_part(dZ)


def gcp_backward(ctx: GcpContext, dZ: np.ndarray) -> np.ndarray:
    """Exact gradient of the loss with respect to X given dL/dZ.

    dL/dU     = 2 (dZ)_sym U lam^{1/2}
    dL/dlam   = 1/2 (lam^{-1/2} U^T dZ U)_diag
    dL/dSigma = U (K^T o (U^T dL/dU) + (dL/dlam)_diag) U^T
    dL/dX     = 2 J X (dL/dSigma)_sym
    """
    G = _check_dz(ctx, dZ)
    U, Ut = ctx.U, np.swapaxes(ctx.U, -1, -2)
    root = np.sqrt(np.maximum(ctx.lam, 0.0))
    dU = 2.0 * (G @ U) * root[..., None, :]
    inner = Ut @ G @ U
    dlam = diag_part(inner * ctx.inv_sqrt_half()[..., :, None])
    core = np.swapaxes(ctx.K, -1, -2) * (Ut @ dU) + dlam
    dSigma = U @ core @ Ut
    return 2.0 * (ctx.J @ ctx.X) @ sym_part(dSigma)


def trimmed_hadamard_term(ctx: GcpContext) -> np.ndarray:
    """``2 K^T o diag(lam^{1/2})``, identically zero since K has a zero diagonal."""
    root = np.sqrt(np.maximum(ctx.lam, 0.0))
    d = ctx.dim
    L = np.zeros(ctx.lam.shape[:-1] + (d, d))
    L[..., np.arange(d), np.arange(d)] = root
    return 2.0 * np.swapaxes(ctx.K, -1, -2) * L


def _half_inv_sqrt_matrix(ctx: GcpContext) -> np.ndarray:
    U = ctx.U
    return (U * ctx.inv_sqrt_half()[..., None, :]) @ np.swapaxes(U, -1, -2)


def gcp_backward_trimmed(ctx: GcpContext, dZ: np.ndarray) -> np.ndarray:
    """Trimmed gradient ``2 J X (2 K^T o lam^{1/2} + 1/2 lam^{-1/2}) dZ``.

    The Hadamard term is evaluated literally and vanishes, leaving
    ``2 J X U (1/2 lam^{-1/2}) U^T dZ``.
    """
    G = _check_dz(ctx, dZ)
    middle = trimmed_hadamard_term(ctx) + _half_inv_sqrt_matrix(ctx)
    return 2.0 * (ctx.J @ ctx.X) @ middle @ G


def preconditioner_factor(ctx: GcpContext, eta: float) -> np.ndarray:
    """The N x D factor ``eta * 2 J X (2 K^T o lam^{1/2} + 1/2 lam^{-1/2})``."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    middle = trimmed_hadamard_term(ctx) + _half_inv_sqrt_matrix(ctx)
    return eta * 2.0 * (ctx.J @ ctx.X) @ middle


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))
