import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_symmetric(rng, d):
    A = rng.standard_normal((d, d))
    return A + A.T


def random_psd(rng, d, rank=None):
    B = rng.standard_normal((d, rank or d))
    return B @ B.T
