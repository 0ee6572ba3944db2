"""Finite-difference verification of the GCP backward pass."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .linalg import EigenSolverError, sym_eig
from .pooling import GcpContext, gcp_backward, gcp_context

TOLERANCE = 1e-5
FD_STEP = 1e-5
MIN_GAP = 0.05


@dataclass
class CaseResult:
    case: int
    n: int
    d: int
    min_gap: float
    rel_error: float
    error: str = ""

    @property
    def passed(self) -> bool:
        return not self.error and self.rel_error <= TOLERANCE


def eigen_gap(X: np.ndarray) -> float:
    """Smallest distance between consecutive covariance eigenvalues (and from 0)."""
    _, lam = sym_eig(gcp_context(X).Sigma)
    lam = np.append(lam, 0.0)
    return float(np.min(-np.diff(lam)))


def sample_case(rng, n: int, d: int, min_gap: float = MIN_GAP, tries: int = 1000):
    """Draw ``(X, dZ)``, resampling X until its covariance eigen-gap is at least ``min_gap``.

    Column scales are spread out so the gap condition is usually met quickly.
    """
    if d > n - 1:
        raise ValueError(f"a centered {n}-row matrix has rank < {d}; need d <= n - 1")
    scales = np.sqrt(np.linspace(1.0, 1.0 + 0.75 * (d - 1), d))
    for _ in range(tries):
        X = rng.standard_normal((n, d)) * scales
        if eigen_gap(X) >= min_gap:
            G = rng.standard_normal((d, d))
            return X, G + G.T
    raise RuntimeError(f"could not draw a case with eigen-gap >= {min_gap}")


def fd_gradient(X: np.ndarray, dZ: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``<dZ, sqrt(X^T J X)>`` over every entry of X."""
    n, d = X.shape
    eye = np.eye(n * d).reshape(n * d, n, d) * h
    Zp = gcp_context(X[None] + eye).Z
    Zm = gcp_context(X[None] - eye).Z
    diff = np.einsum("kij,ij->k", Zp - Zm, dZ)
    return (diff / (2 * h)).reshape(n, d)


def relative_error(g: np.ndarray, ref: np.ndarray) -> float:
    den = np.linalg.norm(ref)
    if den == 0.0:
        return float(np.linalg.norm(g))
    return float(np.linalg.norm(g - ref) / den)


def check_case(X: np.ndarray, dZ: np.ndarray, backward=gcp_backward) -> float:
    ctx = gcp_context(X)
    return relative_error(backward(ctx, dZ), fd_gradient(X, dZ))


def flipped_k_backward(ctx: GcpContext, dZ: np.ndarray) -> np.ndarray:
    """Deliberately wrong backward (negated K) used to show the check has teeth."""
    return gcp_backward(dataclasses.replace(ctx, K=-ctx.K), dZ)


def run_gradcheck(seed: int = 0, cases: int = 20, n_range=(8, 32), d_range=(3, 8),
                  backward=gcp_backward) -> list[CaseResult]:
    if cases < 1:
        raise ValueError("cases must be >= 1")
    rng = np.random.default_rng(seed)
    results = []
    for i in range(cases):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        d = int(rng.integers(d_range[0], min(d_range[1], n - 1) + 1))
        X, dZ = sample_case(rng, n, d)
        try:
            err = check_case(X, dZ, backward)
            results.append(CaseResult(i, n, d, eigen_gap(X), err))
        except EigenSolverError as exc:
            results.append(CaseResult(i, n, d, float("nan"), float("inf"), str(exc)))
    return results


def format_report(results: list[CaseResult]) -> str:
    lines = ["case,n,d,min_gap,rel_error,status"]
    for r in results:
        status = "pass" if r.passed else ("error: " + r.error if r.error else "FAIL")
        lines.append(f"{r.case},{r.n},{r.d},{r.min_gap:.4g},{r.rel_error:.3e},{status}")
    return "\n".join(lines) + "\n"
