import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from crowdpref.exceptions import InternalConsistencyError, InvalidInputError, NumericalFailure
from crowdpref.likelihood import (
    BETA_CAP,
    BatchWorkspace,
    derivative,
    estimate_beta_prior,
    expected_log_likelihood,
    linearization_row,
    observation_noise,
    pair_probability,
    plugin_log_likelihood,
    probit_moments,
    z_hat,
)

finite = st.floats(-20, 20, allow_nan=False)
small_var = st.floats(0, 5)


def test_pair_probability_examples():
    assert pair_probability(0.3, 0.3, 0.2, 0.5, 0.1) == 0.5
    assert pair_probability(1.0, 0.0, 0.0, 0.0, 0.0) == pytest.approx(norm.cdf(1.0), abs=1e-15)
    assert pair_probability(1.0, 0.0, 0.0, 0.0, 0.0) == pytest.approx(0.8413, abs=1e-4)


def test_pair_probability_bad_covariance():
    with pytest.raises(NumericalFailure):
        pair_probability(1.0, 0.0, 0.0, 0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(finite, finite, small_var, small_var, st.floats(-1, 1))
def test_pair_symmetry(fa, fb, caa, cbb, rho):
    cab = rho * np.sqrt(caa * cbb)
    p = pair_probability(fa, fb, caa, cbb, cab)
    q = pair_probability(fb, fa, cbb, caa, cab)
    assert abs(p + q - 1.0) < 1e-12


def test_observation_noise_examples():
    assert observation_noise(1, 1, 1) == pytest.approx(2 / 9)
    assert observation_noise(1, 1, 0) == pytest.approx(2 / 9)
    assert observation_noise(99, 1, 1) == pytest.approx(100 / 101**2)
    assert observation_noise(99, 1, 1) == pytest.approx(0.0098, abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6), st.sampled_from([0, 1]))
def test_observation_noise_bounds(g, l, y):
    q = observation_noise(g, l, y)
    assert 0.0 < q <= 0.25


def test_beta_prior_symmetric():
    g, l = estimate_beta_prior(0.0, 1.0)
    assert g == pytest.approx(l, rel=1e-12)


def test_beta_prior_point_mass_capped():
    g, l = estimate_beta_prior(0.0, 1e-14)
    assert max(g, l) <= BETA_CAP and g == pytest.approx(l)


def test_beta_prior_bad_variance():
    with pytest.raises(InvalidInputError):
        estimate_beta_prior(0.0, 0.0)


def test_moments_against_monte_carlo():
    rng = np.random.default_rng(0)
    phi = norm.cdf(rng.standard_normal(10_000))
    m, v = probit_moments(0.0, 1.0)
    assert m == 0.5
    # Var[Phi(z)] = 1/12 - ... for unit variance; 10k-sample estimate to 3 s.f.
    assert v == pytest.approx(phi.var(), rel=5e-3)
    mq, vq = probit_moments(0.0, 1.0, method="quadrature")
    assert vq == pytest.approx(v, rel=1e-3)


def test_exact_moments_match_closed_form():
    # Var[Phi(z)], z ~ N(0, v): arcsin(v / (1 + v)) / (2 pi)
    for var in (0.1, 1.0, 10.0, 100.0):
        _, v = probit_moments(0.0, var)
        assert v == pytest.approx(np.arcsin(var / (1 + var)) / (2 * np.pi), rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0.01, 50))
def test_beta_feasibility(mu, var):
    g, l = estimate_beta_prior(mu, var)
    assert 0 < g <= BETA_CAP and 0 < l <= BETA_CAP
    m, _ = probit_moments(mu, var)
    if min(g, l) > 1e-6 and max(g, l) < BETA_CAP:
        assert g / (g + l) == pytest.approx(m, abs=1e-6)


def test_linearization_row_examples():
    row = linearization_row(0.0, 1, 2, 5, [2, 3, 5], kind="bernoulli")
    assert row.tolist() == [0.25, 0.0, -0.25]
    row = linearization_row(0.0, 0, 2, 5, [2, 3, 5], kind="bernoulli")
    assert row.tolist() == [-0.25, 0.0, 0.25]
    with pytest.raises(InternalConsistencyError):
        linearization_row(0.0, 1, 2, 7, [2, 3, 5])


def test_linearization_row_finite_differences(rng):
    h = 1e-6
    for _ in range(100):
        fa, fb = rng.normal(size=2)
        y = int(rng.integers(2))
        z = fa - fb
        row = linearization_row(z, y, 0, 1, [0, 1])
        sign = 2 * y - 1
        fd_a = (norm.cdf(sign * (fa + h - fb)) - norm.cdf(sign * (fa - h - fb))) / (2 * h)
        fd_b = (norm.cdf(sign * (fa - fb - h)) - norm.cdf(sign * (fa - fb + h))) / (2 * h)
        assert abs(row[0] - fd_a) < 1e-6
        assert abs(row[1] - fd_b) < 1e-6


def test_derivative_kinds():
    assert derivative(0.0, "probit") == pytest.approx(norm.pdf(0.0))
    assert derivative(0.0, "bernoulli") == pytest.approx(0.25)
    with pytest.raises(InvalidInputError):
        derivative(0.0, "logit")


def test_expected_log_likelihood_limits():
    mean = np.array([0.3, -1.2])
    y = np.array([1, 0])
    assert np.allclose(expected_log_likelihood(mean, np.zeros(2), y), plugin_log_likelihood(mean, y), atol=1e-14)
    # E[ln Phi(z)] by brute-force integration
    from scipy.integrate import quad
    oracle = quad(lambda z: norm.logcdf(z) * norm.pdf(z, 0.5, 0.8), -12, 12)[0]
    assert expected_log_likelihood(np.array([0.5]), np.array([0.64]), np.array([1]))[0] == pytest.approx(oracle, abs=1e-8)


def test_workspace_dense_g_matches_rows():
    ws = BatchWorkspace(
        items=np.array([1, 4, 7]), loc_a=np.array([0, 2]), loc_b=np.array([1, 0]), y=np.array([1.0, 0.0]),
        z_hat=np.array([0.2, -0.4]), slopes=np.array([0.3, -0.1]), Q_diag=np.array([0.2, 0.2]),
        gamma=1.0, lam=1.0, mean_diff=np.array([0.2, -0.4]),
    )
    assert np.allclose(ws.G, [[0.3, -0.3, 0.0], [0.1, 0.0, -0.1]])
    assert np.allclose(ws.pseudo, ws.residual + ws.slopes * ws.mean_diff)


def test_z_hat_vectorised():
    z = z_hat(np.array([1.0, 2.0]), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))
    assert z.tolist() == [1.0, 2.0]
