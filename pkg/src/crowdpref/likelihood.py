"""Probit pairwise likelihood and its Gaussian approximation.

The label noise variance is fixed at 0.5 per item, so the latent difference
``z = f_a - f_b`` enters the probit directly. The Gaussian approximation uses a
diagonal noise matrix Q from beta-Bernoulli moment matching and a first-order
expansion G of the label probability around the current posterior means.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, owens_t

from .exceptions import InternalConsistencyError, InvalidInputError, NumericalFailure

SIGMA_SQUARED = 0.5
PROB_CLAMP = 1e-12
QUADRATURE_NODES = 20
BETA_CAP = 1e6
BETA_FLOOR = 1e-6
DERIVATIVES = ("probit", "bernoulli")

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def norm_cdf(z):
    return ndtr(z)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def clamp_prob(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def hermite_rule(n: int = QUADRATURE_NODES):
    """Nodes and weights for ``E[g(x)]`` with ``x ~ N(0, 1)``."""
    x, w = np.polynomial.hermite.hermgauss(n)
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


def z_hat(f_a, f_b, C_aa, C_bb, C_ab):
    """Expected latent difference scaled by its predictive standard deviation."""
    denom = 1.0 + np.asarray(C_aa) + np.asarray(C_bb) - 2.0 * np.asarray(C_ab)
    if np.any(~(denom > 0)):
        raise NumericalFailure("pair variance 1 + C_aa + C_bb - 2 C_ab is not positive")
    return (np.asarray(f_a) - np.asarray(f_b)) / np.sqrt(denom)


def pair_probability(f_a, f_b, C_aa, C_bb, C_ab):
    """Posterior probability that item a is preferred to item b."""
    out = norm_cdf(z_hat(f_a, f_b, C_aa, C_bb, C_ab))
    return float(out) if np.ndim(out) == 0 else out


def probit_moments(prior_mean_z: float, prior_var_z: float, method: str = "exact",
                   quadrature_nodes: int = QUADRATURE_NODES):
    """Mean and variance of Phi(z) for ``z ~ N(prior_mean_z, prior_var_z)``.

    ``"exact"`` uses ``E[Phi(z)^2] = Phi(h) - 2 T(h, 1/sqrt(1 + 2 v))`` with
    ``h = mu / sqrt(1 + v)`` and Owen's T. ``"quadrature"`` uses Gauss-Hermite,
    which loses accuracy once Phi(z) is close to a step over the prior (large
    variance).
    """
    if method == "exact":
        h = prior_mean_z / np.sqrt(1.0 + prior_var_z)
        m = float(ndtr(h))
        second = m - 2.0 * float(owens_t(h, 1.0 / np.sqrt(1.0 + 2.0 * prior_var_z)))
        return m, max(second - m * m, 0.0)
    if method == "quadrature":
        x, w = hermite_rule(quadrature_nodes)
        phi = norm_cdf(prior_mean_z + np.sqrt(prior_var_z) * x)
        m = float(np.dot(w, phi))
        return m, float(np.dot(w, (phi - m) ** 2))
    raise InvalidInputError(f"unknown moment method {method!r}")


def estimate_beta_prior(prior_mean_z: float, prior_var_z: float, quadrature_nodes: int = QUADRATURE_NODES,
                        method: str = "exact"):
    """Beta parameters (gamma, lambda) matching the prior moments of Phi(z).

    ``z ~ N(prior_mean_z, prior_var_z)``; see ``probit_moments`` for how the
    mean and variance of Phi(z) are obtained. An infeasible variance (at or
    above the Bernoulli bound) is clamped to 0.99 of the bound. Both outputs
    are kept in ``[1e-6, 1e6]`` by rescaling them together, which preserves
    their ratio.
    """
    if not prior_var_z > 0:
        raise InvalidInputError(f"prior variance must be positive, got {prior_var_z}")
    m, v = probit_moments(prior_mean_z, prior_var_z, method, quadrature_nodes)
    m = float(np.clip(m, PROB_CLAMP, 1.0 - PROB_CLAMP))
    bound = m * (1.0 - m)
    if v >= bound:
        v = 0.99 * bound
    if v <= 0.0:
        total = np.inf
    else:
        total = bound / v - 1.0
    gamma, lam = m * total, (1.0 - m) * total
    low = min(gamma, lam)
    if low < BETA_FLOOR:
        gamma, lam = gamma * BETA_FLOOR / low, lam * BETA_FLOOR / low
    high = max(gamma, lam)
    if not np.isfinite(high):
        gamma, lam = BETA_CAP * m / max(m, 1 - m), BETA_CAP * (1 - m) / max(m, 1 - m)
    elif high > BETA_CAP:
        gamma, lam = gamma * BETA_CAP / high, lam * BETA_CAP / high
    return float(np.clip(gamma, BETA_FLOOR, BETA_CAP)), float(np.clip(lam, BETA_FLOOR, BETA_CAP))


def observation_noise(gamma, lam, y):
    """Variance of the posterior beta-Bernoulli after observing ``y``."""
    y = np.asarray(y, dtype=float)
    out = (gamma + y) * (lam + 1.0 - y) / (gamma + lam + 1.0) ** 2
    return float(out) if out.ndim == 0 else out


def derivative(z, kind: str = "probit"):
    """Slope used by the linearisation.

    ``"probit"`` is the exact derivative of Phi; ``"bernoulli"`` is the
    Phi(1 - Phi) approximation.
    """
    if kind == "probit":
        return norm_pdf(z)
    if kind == "bernoulli":
        p = norm_cdf(z)
        return p * (1.0 - p)
    raise InvalidInputError(f"unknown derivative kind {kind!r}; expected one of {DERIVATIVES}")


def signed_slopes(z, y, kind: str = "probit"):
    """Per-pair coefficient ``(2y - 1) * slope(z)`` shared by G and H rows."""
    y = np.asarray(y, dtype=float)
    return (2.0 * y - 1.0) * derivative(z, kind)


def observed_probability(z, y):
    """Probability of the label that was actually observed, Phi((2y - 1) z).

    The (2y - 1) sign in G linearises this quantity, so its residual against
    the certain outcome 1 is the matching pseudo-observation.
    """
    y = np.asarray(y, dtype=float)
    return norm_cdf((2.0 * y - 1.0) * np.asarray(z, dtype=float))


def linearization_row(z_hat_p: float, y_p: int, a_p, b_p, batch_items, kind: str = "probit") -> np.ndarray:
    """One row of G over ``batch_items``: slope at ``a_p`` minus slope at ``b_p``."""
    batch_items = np.asarray(batch_items)
    pos_a = np.flatnonzero(batch_items == a_p)
    pos_b = np.flatnonzero(batch_items == b_p)
    if pos_a.size == 0 or pos_b.size == 0:
        raise InternalConsistencyError(f"pair ({a_p}, {b_p}) not covered by batch items")
    row = np.zeros(batch_items.size)
    g = float(signed_slopes(z_hat_p, y_p, kind))
    row[pos_a[0]] += g
    row[pos_b[0]] -= g
    return row


def expected_log_likelihood(mean_diff, var_diff, y, quadrature_nodes: int = QUADRATURE_NODES):
    """``E[ln Phi((2y - 1) z)]`` for ``z ~ N(mean_diff, var_diff)``, per pair."""
    x, w = hermite_rule(quadrature_nodes)
    sign = 2.0 * np.asarray(y, dtype=float) - 1.0
    sd = np.sqrt(np.maximum(np.asarray(var_diff, dtype=float), 0.0))
    z = np.asarray(mean_diff, dtype=float)[:, None] + sd[:, None] * x[None, :]
    return log_ndtr(sign[:, None] * z) @ w


def plugin_log_likelihood(mean_diff, y):
    """``ln Phi((2y - 1) * mean_diff)`` evaluated at the posterior means."""
    sign = 2.0 * np.asarray(y, dtype=float) - 1.0
    return log_ndtr(sign * np.asarray(mean_diff, dtype=float))


@dataclass
class BatchWorkspace:
    """Linearisation of one mini-batch.

    ``items`` lists the batch items; ``loc_a``/``loc_b`` index into it. The
    dense G matrix is only materialised on request since each row has two
    non-zeros (``slopes`` at a, minus at b). ``mean_diff`` holds the
    expansion point ``f_a - f_b`` the linearisation was taken at.
    """

    items: np.ndarray
    loc_a: np.ndarray
    loc_b: np.ndarray
    y: np.ndarray
    z_hat: np.ndarray
    slopes: np.ndarray
    Q_diag: np.ndarray
    gamma: float
    lam: float
    mean_diff: np.ndarray | None = None

    @property
    def G(self) -> np.ndarray:
        G = np.zeros((self.y.size, self.items.size))
        rows = np.arange(self.y.size)
        np.add.at(G, (rows, self.loc_a), self.slopes)
        np.add.at(G, (rows, self.loc_b), -self.slopes)
        return G

    @property
    def residual(self) -> np.ndarray:
        return 1.0 - observed_probability(self.z_hat, self.y)

    @property
    def pseudo(self) -> np.ndarray:
        """Pseudo-observation ``residual + G f`` at the expansion point."""
        if self.mean_diff is None:
            raise InternalConsistencyError("workspace has no expansion point")
        return self.residual + self.slopes * self.mean_diff
