import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcpool.gradcheck import fd_gradient, relative_error, sample_case
from gcpool.pooling import (build_K, covariance, devectorize_grad, gap_backward, gap_forward,
                            gcp_backward, gcp_backward_trimmed, gcp_context, gcp_forward,
                            matrix_sqrt, preconditioner_factor, trimmed_hadamard_term,
                            vectorize_sym)

from conftest import random_psd, random_symmetric

X22 = np.array([[1.0, 2.0], [3.0, 4.0]])


def test_gap_forward_examples():
    np.testing.assert_array_equal(gap_forward(X22, 0.5), [2.0, 3.0])
    np.testing.assert_array_equal(gap_forward(X22, 1.0), [4.0, 6.0])
    np.testing.assert_array_equal(gap_forward(X22), [2.0, 3.0])
    np.testing.assert_array_equal(gap_forward(np.zeros((5, 3))), np.zeros(3))


def test_gap_backward_examples(rng):
    np.testing.assert_array_equal(gap_backward(np.array([1.0, 0.0]), 2, 1.0), [[1, 0], [1, 0]])
    np.testing.assert_array_equal(gap_backward(np.zeros(3), 4), np.zeros((4, 3)))
    X = rng.standard_normal((6, 3))
    g = rng.standard_normal(3)
    h = 1e-6
    fd = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        fd[idx] = (g @ gap_forward(X + E) - g @ gap_forward(X - E)) / (2 * h)
    np.testing.assert_allclose(gap_backward(g, 6), fd, atol=1e-10)


def test_covariance_examples():
    Sigma, _ = covariance(np.tile([1.0, -2.0, 3.0], (5, 1)))
    np.testing.assert_array_equal(Sigma, np.zeros((3, 3)))
    Sigma, _ = covariance(np.eye(2))
    np.testing.assert_allclose(Sigma, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-16)
    Sigma, _ = covariance(np.array([[2.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_allclose(Sigma, [[1.0, 0.0], [0.0, 0.0]], atol=1e-16)


def test_covariance_matches_numpy(rng):
    X = rng.standard_normal((20, 5))
    Sigma, _ = covariance(X)
    np.testing.assert_allclose(Sigma, np.cov(X, rowvar=False, bias=True), atol=1e-14)
    assert np.linalg.eigvalsh(Sigma).min() >= -1e-10 * np.trace(Sigma)


def test_matrix_sqrt_examples():
    np.testing.assert_allclose(matrix_sqrt(np.eye(3))[0], np.eye(3), atol=1e-15)
    np.testing.assert_allclose(matrix_sqrt(np.diag([4.0, 9.0]))[0], np.diag([2.0, 3.0]),
                               atol=1e-15)
    a, b = (np.sqrt(3) + 1) / 2, (np.sqrt(3) - 1) / 2
    Z, _ = matrix_sqrt(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(Z, [[a, b], [b, a]], atol=1e-14)


def test_matrix_sqrt_reconstruction(rng):
    for d in (1, 3, 8, 16):
        S = random_psd(rng, d)
        Z, _ = matrix_sqrt(S)
        assert np.linalg.norm(Z @ Z - S) / max(1.0, np.linalg.norm(S)) <= 1e-10
        assert np.linalg.eigvalsh(Z).min() >= -1e-10


def test_build_K_examples():
    np.testing.assert_array_equal(build_K(np.array([3.0, 1.0])), [[0.0, 0.5], [-0.5, 0.0]])
    np.testing.assert_array_equal(build_K(np.array([2.0, 2.0])), np.zeros((2, 2)))
    np.testing.assert_array_equal(build_K(np.array([5.0])), [[0.0]])


def test_vectorize_examples(rng):
    np.testing.assert_array_equal(vectorize_sym(np.eye(2)), [1.0, 0.0, 1.0])
    np.testing.assert_allclose(vectorize_sym(np.array([[1.0, 2.0], [2.0, 3.0]])),
                               [1.0, 2 * np.sqrt(2), 3.0], atol=1e-15)
    for d in (1, 2, 5):
        A, B = random_symmetric(rng, d), random_symmetric(rng, d)
        assert abs(vectorize_sym(A) @ vectorize_sym(B) - np.sum(A * B)) <= 1e-12 * (1 + abs(np.sum(A * B)))
        np.testing.assert_allclose(devectorize_grad(vectorize_sym(A)), A, atol=1e-14)


def test_devectorize_is_adjoint(rng):
    d = 4
    A = random_symmetric(rng, d)
    g = rng.standard_normal(d * (d + 1) // 2)
    assert abs(g @ vectorize_sym(A) - np.sum(devectorize_grad(g) * A)) <= 1e-12


def test_gcp_forward_examples(rng):
    vec, ctx = gcp_forward(np.eye(2))
    np.testing.assert_allclose(ctx.Z, [[0.3536, -0.3536], [-0.3536, 0.3536]], atol=1e-4)
    np.testing.assert_allclose(ctx.lam, [0.5, 0.0], atol=1e-15)
    vec, ctx = gcp_forward(np.tile([1.0, 2.0, 3.0], (4, 1)))
    np.testing.assert_array_equal(vec, np.zeros(6))
    assert ctx.clamped.all()
    X = rng.standard_normal((16, 4))
    vec, ctx = gcp_forward(X)
    assert vec.shape == (10,)
    Z = devectorize_grad(vec)
    assert np.linalg.norm(Z @ Z - ctx.Sigma) <= 1e-8 * np.linalg.norm(ctx.Sigma)
    assert np.all(np.diag(ctx.K) == 0)


def test_gcp_backward_zero_and_scalar():
    ctx = gcp_context(np.random.default_rng(0).standard_normal((8, 3)))
    np.testing.assert_array_equal(gcp_backward(ctx, np.zeros((3, 3))), np.zeros((8, 3)))
    ctx = gcp_context(np.array([[2.0], [0.0]]))
    np.testing.assert_allclose(gcp_backward(ctx, np.array([[1.0]])), [[0.5], [-0.5]], atol=1e-15)


def test_gcp_backward_finite_difference(rng):
    X, dZ = sample_case(rng, 8, 3)
    err = relative_error(gcp_backward(gcp_context(X), dZ), fd_gradient(X, dZ))
    assert err <= 1e-6


def test_gcp_backward_batched_matches_single(rng):
    Xs = rng.standard_normal((3, 10, 4))
    dZ = random_symmetric(rng, 4)
    batched = gcp_backward(gcp_context(Xs), dZ)
    for i in range(3):
        np.testing.assert_allclose(batched[i], gcp_backward(gcp_context(Xs[i]), dZ), atol=1e-12)


def test_trimmed_examples():
    ctx = gcp_context(np.array([[2.0], [0.0]]))
    dZ = np.array([[1.0]])
    np.testing.assert_array_equal(gcp_backward_trimmed(ctx, dZ), gcp_backward(ctx, dZ))
    np.testing.assert_allclose(gcp_backward_trimmed(ctx, dZ), [[0.5], [-0.5]], atol=1e-15)
    ctx = gcp_context(np.random.default_rng(1).standard_normal((6, 3)))
    np.testing.assert_array_equal(gcp_backward_trimmed(ctx, np.zeros((3, 3))), np.zeros((6, 3)))


def test_trimmed_equals_full_when_simultaneously_diagonal(rng):
    # orthogonal centered columns with distinct norms give a diagonal covariance
    n, d = 12, 4
    Q, _ = np.linalg.qr(rng.standard_normal((n, d)) - rng.standard_normal((n, d)).mean(0))
    Q -= Q.mean(axis=0)
    Q, _ = np.linalg.qr(Q)
    X = Q * np.array([5.0, 4.0, 3.0, 2.0])
    ctx = gcp_context(X)
    assert np.abs(ctx.Sigma - np.diag(np.diag(ctx.Sigma))).max() <= 1e-14
    dZ = np.diag(rng.standard_normal(d))
    np.testing.assert_allclose(gcp_backward_trimmed(ctx, dZ), gcp_backward(ctx, dZ), atol=1e-12)


def test_hadamard_term_vanishes(rng):
    for d in (1, 3, 6):
        ctx = gcp_context(rng.standard_normal((10, d)))
        term = trimmed_hadamard_term(ctx)
        assert term.shape == (d, d)
        assert np.all(term == 0.0)


def test_trimmed_differs_from_full_in_general(rng):
    X, dZ = sample_case(rng, 10, 4)
    ctx = gcp_context(X)
    assert relative_error(gcp_backward_trimmed(ctx, dZ), gcp_backward(ctx, dZ)) > 1e-3


def test_preconditioner_factor(rng):
    ctx = gcp_context(rng.standard_normal((9, 3)))
    dZ = random_symmetric(rng, 3)
    for eta in (0.3, 1.0, 2.5):
        np.testing.assert_allclose(preconditioner_factor(ctx, eta) @ dZ,
                                   eta * gcp_backward_trimmed(ctx, dZ), atol=1e-12)
    np.testing.assert_array_equal(preconditioner_factor(ctx, 0.0), np.zeros((9, 3)))
    ctx1 = gcp_context(np.array([[2.0], [0.0]]))
    # 2 J X * 1/2 lam^{-1/2} with lam = 1 and J = (I - 11^T/2) / 2
    np.testing.assert_allclose(preconditioner_factor(ctx1, 1.0), [[0.5], [-0.5]], atol=1e-15)
    with pytest.raises(ValueError):
        preconditioner_factor(ctx, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 2**31))
def test_gcp_properties(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    vec, ctx = gcp_forward(X)
    assert np.all(np.isfinite(vec))
    assert vec.shape == (d * (d + 1) // 2,)
    np.testing.assert_allclose(ctx.Z, ctx.Z.T, atol=0)
    Z = devectorize_grad(vec)
    assert np.linalg.norm(Z @ Z - ctx.Sigma) <= 1e-8 * max(1.0, np.linalg.norm(ctx.Sigma))
    # shifting every row by the same vector leaves the covariance unchanged
    shifted = gcp_forward(X + np.random.default_rng(seed + 1).standard_normal(d))[0]
    np.testing.assert_allclose(shifted, vec, atol=1e-8 * (1 + np.abs(vec).max()))
    assert np.all(np.diag(ctx.K) == 0)
