"""
Backpropagating through a matrix square root
============================================

A covariance head maps an N x D feature matrix to the square root of its
sample covariance.  The gradient has to pass through an eigendecomposition.
This walk-through checks the analytic gradient against finite differences
and shows what the trimmed variant drops.
"""

import numpy as np

from gcpool.gradcheck import fd_gradient, flipped_k_backward, relative_error, sample_case
from gcpool.pooling import gcp_backward, gcp_backward_trimmed, gcp_context

rng = np.random.default_rng(0)

# A feature matrix whose covariance has well separated eigenvalues, and a
# random symmetric upstream gradient dL/dZ.
X, dZ = sample_case(rng, n=16, d=4)
ctx = gcp_context(X)
print("eigenvalues of the covariance:", np.round(ctx.lam, 4))

# Z really is a square root of the covariance.
print("||Z Z - Sigma||_F =", np.linalg.norm(ctx.Z @ ctx.Z - ctx.Sigma))

# The exact backward against central differences.
fd = fd_gradient(X, dZ)
print("exact backward vs finite differences:", relative_error(gcp_backward(ctx, dZ), fd))

# Flip the sign of the reciprocal eigen-gap matrix K and the check fails loudly.
print("with K negated:", relative_error(flipped_k_backward(ctx, dZ), fd))

# The trimmed gradient keeps only the eigenvalue path.  It agrees with the
# exact one when the covariance and dZ share an eigenbasis, and otherwise
# differs.
print("trimmed vs exact:", relative_error(gcp_backward_trimmed(ctx, dZ), gcp_backward(ctx, dZ)))
D = np.diag(rng.standard_normal(4))
U = ctx.U
aligned = U @ D @ U.T
print("trimmed vs exact, dZ aligned with the eigenvectors:",
      relative_error(gcp_backward_trimmed(ctx, aligned), gcp_backward(ctx, aligned)))
