import numpy as np
import pytest
from scipy.special import ndtr

from crowdpref.kernels import KernelConfig, covariance_matrix, median_heuristic


def gp_sim(seed=0, N=50, P=500, noisy=True, D=2):
    """Items, pairs and the true utility drawn from a Matern 3/2 GP prior."""
    rng = np.random.default_rng(seed)
    X = rng.random((N, D))
    cfg = KernelConfig("matern32", median_heuristic(X))
    K = covariance_matrix(X, None, cfg) + 1e-6 * np.eye(N)
    f = np.linalg.cholesky(K) @ rng.standard_normal(N)
    a = rng.integers(N, size=P)
    b = (a + rng.integers(1, N, size=P)) % N
    if noisy:
        y = (rng.random(P) < ndtr(f[a] - f[b])).astype(int)
    else:
        y = (f[a] > f[b]).astype(int)
    return X, a, b, y, f


@pytest.fixture
def small_sim():
    return gp_sim(seed=0, N=30, P=200)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
