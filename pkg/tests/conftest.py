import numpy as np
import pytest


def random_psd(rng, n, rank=None):
    k = n if rank is None else rank
    B = rng.standard_normal((n, k))
    K = B @ B.T / max(k, 1)
    return (K + K.T) / 2


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
