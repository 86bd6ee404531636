"""Shared stochastic variational inference machinery.

``GaussianFactor`` is one variational Gaussian over inducing values with its
Gamma-distributed inverse scale. ``FeatureSpace`` holds the fit-time kernel
caches that map inducing values to training entities. Neither GPPL nor the
crowd model touch the natural-parameter arithmetic directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import digamma, gammaln

from .exceptions import InvalidConfigError, InvalidInputError, NumericalFailure
from .kernels import KernelConfig, as_features, covariance_matrix, jittered_cholesky, pair_covariance


@dataclass
class SviSchedule:
    """Mini-batch size, step-size schedule and stopping rules.

    ``forgetting_rate=0`` gives ``rho_i = 1`` on every iteration (plain
    full-batch variational updates when combined with ``batch_size >= P``).
    """

    batch_size: int = 1000
    delay: float = 1.0
    forgetting_rate: float = 0.9
    max_iterations: int = 200
    convergence_tol: float = 1e-4
    inner_max: int = 20
    inner_tol: float = 1e-3
    elbo_every: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be positive")
        if self.delay < 0:
            raise InvalidConfigError("delay must be non-negative")
        if not 0.0 <= self.forgetting_rate <= 1.0:
            raise InvalidConfigError("forgetting_rate must lie in [0, 1]")
        if self.max_iterations < 1 or self.inner_max < 1 or self.elbo_every < 1:
            raise InvalidConfigError("iteration counts must be positive")

    def rho(self, i: int) -> float:
        """Mixing weight for iteration ``i`` (1-based)."""
        if self.forgetting_rate == 0.0:
            return 1.0
        return float(min(1.0, (i + self.delay) ** (-self.forgetting_rate)))

    @staticmethod
    def pi(P: int, P_i: int) -> float:
        return P / P_i


class BatchSampler:
    """Yields sorted index batches, without replacement inside an epoch."""

    def __init__(self, P: int, batch_size: int, seed: int):
        self.P = P
        self.batch_size = min(batch_size, P)
        self.rng = np.random.default_rng(seed)
        self._perm = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self.batch_size >= self.P:
            return np.arange(self.P)
        if self._pos >= self._perm.size:
            self._perm = self.rng.permutation(self.P)
            self._pos = 0
        batch = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return np.sort(batch)


def _row_keys(X):
    X = np.ascontiguousarray(X)
    return [row.tobytes() for row in X]


class InducingPrior:
    """Kernel over the inducing inputs: everything a fitted model keeps.

    The prior over inducing values is ``N(0, (K_mm + jitter * I) / s)``.
    Cross covariances add the same nugget wherever an input coincides with an
    inducing input, so projecting the inducing inputs reproduces them. For
    the identity family every entity is its own inducing point, ``K_mm = I``
    and ``points`` may be ``None`` (entities are then addressed by index).
    """

    def __init__(self, cfg: KernelConfig, points=None, M: int | None = None):
        self.cfg = cfg
        if cfg.is_identity:
            self.Z = None if points is None else as_features(points).copy()
            self.M = int(M if M is not None else self.Z.shape[0])
            self.jitter = 0.0
            self.chol = None
            self.logdet = 0.0
            return
        self.Z = as_features(points).copy()
        self.M = self.Z.shape[0]
        K = covariance_matrix(self.Z, None, cfg)
        L, jit = jittered_cholesky(K, cfg.jitter)
        self.jitter = jit
        self._K = K + jit * np.eye(self.M)
        self.chol = L
        K_inv = cho_solve((L, True), np.eye(self.M))
        self._K_inv = 0.5 * (K_inv + K_inv.T)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        self._zkeys = {k: i for i, k in enumerate(_row_keys(self.Z))}

    @property
    def identity(self) -> bool:
        return self.cfg.is_identity

    @property
    def K_mm(self) -> np.ndarray:
        return np.eye(self.M) if self.identity else self._K

    @property
    def K_inv(self) -> np.ndarray:
        return np.eye(self.M) if self.identity else self._K_inv

    def prior_diag(self) -> float:
        return 1.0 + self.jitter

    def cross(self, Xs) -> np.ndarray:
        """Nugget-augmented covariance between ``Xs`` and the inducing inputs."""
        Xs = as_features(Xs)
        if self.identity:
            if self.Z is None:
                raise InvalidInputError("identity prior without stored inputs: address entities by index")
            return covariance_matrix(Xs, self.Z, self.cfg)
        K = covariance_matrix(Xs, self.Z, self.cfg)
        if self.jitter > 0:
            for i, key in enumerate(_row_keys(Xs)):
                j = self._zkeys.get(key)
                if j is not None:
                    K[i, j] += self.jitter
        return K

    def project(self, Xs) -> np.ndarray:
        """``K_*m K_mm^{-1}`` for new inputs."""
        Ksm = self.cross(Xs)
        if self.identity:
            return Ksm
        return cho_solve((self.chol, True), Ksm.T).T

    def nbytes(self) -> int:
        if self.identity:
            return 0 if self.Z is None else int(self.Z.nbytes)
        return int(self.Z.nbytes + self._K.nbytes + self._K_inv.nbytes + self.chol.nbytes)


class FeatureSpace:
    """Fit-time caches projecting inducing values onto training entities.

    Holds ``A = K_nm K_mm^{-1}`` (N x M). When the inducing set is the
    training set itself ``A`` is exactly the identity; for identity priors
    without stored inputs it is left implicit.
    """

    def __init__(self, prior: InducingPrior, X=None, n: int | None = None, is_training_set: bool = False):
        self.prior = prior
        self.X = None if X is None else as_features(X)
        self.n = self.X.shape[0] if self.X is not None else int(n if n is not None else prior.M)
        if prior.identity and (prior.Z is None or self.X is None):
            if self.n != prior.M:
                raise InvalidInputError("identity prior addressed by index needs one entity per inducing point")
            self.A = None
        elif is_training_set and prior.Z is not None and np.array_equal(prior.Z, self.X):
            self.A = np.eye(prior.M)
        else:
            self.A = prior.project(self.X)

    @property
    def M(self) -> int:
        return self.prior.M

    @property
    def identity(self) -> bool:
        return self.prior.identity

    def rows(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self.A is None:
            R = np.zeros((idx.size, self.M))
            R[np.arange(idx.size), idx] = 1.0
            return R
        return self.A[idx]

    def pair_prior_diff_var(self, idx_a, idx_b) -> np.ndarray:
        """Prior variance of ``f_a - f_b`` in kernel units (before dividing by E[s])."""
        idx_a = np.asarray(idx_a)
        idx_b = np.asarray(idx_b)
        if self.identity:
            if self.X is None:
                return 2.0 * (idx_a != idx_b)
            same = np.all(self.X[idx_a] == self.X[idx_b], axis=1)
            return 2.0 * ~same
        jit = self.prior.jitter
        k_ab = pair_covariance(self.X, idx_a, idx_b, self.prior.cfg)
        same = np.all(self.X[idx_a] == self.X[idx_b], axis=1)
        return 2.0 * self.prior.prior_diag() - 2.0 * (k_ab + jit * same)

    def nystrom_pair_residual(self, idx_a, idx_b, D=None) -> np.ndarray:
        """``kdiff - d^T K_mm d`` for ``d = A[a] - A[b]``: variance missed by the inducing points."""
        if self.A is None:
            return np.zeros(np.size(idx_a))
        kdiff = self.pair_prior_diff_var(idx_a, idx_b)
        if D is None:
            D = self.A[idx_a] - self.A[idx_b]
        return np.maximum(kdiff - np.einsum("ij,ij->i", D @ self.prior.K_mm, D), 0.0)

    def nystrom_point_residual(self, idx) -> np.ndarray:
        if self.A is None:
            return np.zeros(np.size(idx))
        R = self.A[np.asarray(idx)]
        return np.maximum(self.prior.prior_diag() - np.einsum("ij,ij->i", R @ self.prior.K_mm, R), 0.0)


@dataclass
class Snapshot:
    prec: np.ndarray
    h: np.ndarray


class GaussianFactor:
    """Variational Gaussian over M inducing values plus a Gamma inverse scale.

    Prior: ``u ~ N(0, K_mm / s)``, ``s ~ Gamma(alpha0, rate=beta0)``. The
    posterior is stored as mean, covariance and precision; with
    ``diagonal=True`` (identity prior) all three are vectors.
    """

    def __init__(self, prior: InducingPrior, alpha0: float, beta0: float, diagonal: bool = False, mean=None):
        if alpha0 <= 0 or beta0 <= 0:
            raise InvalidConfigError("Gamma hyperparameters must be positive")
        self.prior = prior
        self.M = prior.M
        self.diagonal = diagonal
        if diagonal and not prior.identity:
            raise InvalidConfigError("diagonal factors need an identity kernel")
        self.alpha0 = float(alpha0)
        self.beta0 = float(beta0)
        self.alpha = float(alpha0)
        self.beta = float(beta0)
        self.mean = np.zeros(self.M) if mean is None else np.array(mean, dtype=float)
        if diagonal:
            self.cov = np.ones(self.M)
            self.prec = np.ones(self.M)
        else:
            self.cov = prior.K_mm.copy()
            self.prec = prior.K_inv.copy()

    # -- moments -----------------------------------------------------------------
    @property
    def e_s(self) -> float:
        return self.alpha / self.beta

    @property
    def e_log_s(self) -> float:
        return float(digamma(self.alpha) - np.log(self.beta))

    def cov_matrix(self) -> np.ndarray:
        return np.diag(self.cov) if self.diagonal else self.cov

    def snapshot(self) -> Snapshot:
        if self.diagonal:
            return Snapshot(self.prec.copy(), self.prec * self.mean)
        return Snapshot(self.prec.copy(), self.prec @ self.mean)

    # -- updates -----------------------------------------------------------------
    def natural_update(self, snap: Snapshot, rho: float, pi: float, info, eta) -> None:
        """Blend the snapshot with the batch-optimal natural parameters.

        ``info`` is the batch precision ``B^T W B`` and ``eta`` the batch
        precision-weighted pseudo-observation ``B^T w y~`` (both before
        multiplying by ``pi``).
        """
        es = self.e_s
        if self.diagonal:
            prec = (1.0 - rho) * snap.prec + rho * (es + pi * info)
            if np.any(~(prec > 0)):
                raise NumericalFailure("diagonal precision became non-positive")
            h = (1.0 - rho) * snap.h + rho * pi * eta
            self.prec = prec
            self.cov = 1.0 / prec
            self.mean = h / prec
            return
        prec = (1.0 - rho) * snap.prec + rho * (es * self.prior.K_inv + pi * info)
        prec = 0.5 * (prec + prec.T)
        h = (1.0 - rho) * snap.h + rho * pi * eta
        L, _ = jittered_cholesky(prec, jitter=1e-12, max_jitter=1e-2 * max(1.0, float(np.mean(np.diag(prec)))))
        Linv = solve_triangular(L, np.eye(self.M), lower=True, check_finite=False)
        cov = Linv.T @ Linv
        self.prec = prec
        self.cov = 0.5 * (cov + cov.T)
        self.mean = cho_solve((L, True), h)

    def expected_quadratic(self) -> float:
        """``tr(K^{-1}(S + m m^T))``."""
        if self.diagonal:
            return float(np.sum(self.cov) + self.mean @ self.mean)
        Ki = self.prior.K_inv
        return float(np.sum(Ki * self.cov) + self.mean @ Ki @ self.mean)

    def update_scale(self) -> tuple[float, float, float, float]:
        """Closed-form Gamma update; returns ``(alpha, beta, E[s], E[ln s])``."""
        beta = self.beta0 + 0.5 * self.expected_quadratic()
        if not beta > 0:
            raise NumericalFailure(f"Gamma rate became non-positive ({beta})")
        self.alpha = self.alpha0 + 0.5 * self.M
        self.beta = beta
        return self.alpha, self.beta, self.e_s, self.e_log_s

    # -- bound terms -------------------------------------------------------------
    def logdet_cov(self) -> float:
        if self.diagonal:
            return float(np.sum(np.log(self.cov)))
        L, _ = jittered_cholesky(self.prec, jitter=1e-12)
        return -2.0 * float(np.sum(np.log(np.diag(L))))

    def gaussian_term(self) -> float:
        """``E[ln p(u | s)] - E[ln q(u)]`` under the mean-field posterior."""
        M = self.M
        es = self.e_s
        return -0.5 * (
            self.prior.logdet - M * self.e_log_s - self.logdet_cov() - M + es * self.expected_quadratic()
        )

    def gamma_term(self) -> float:
        """``E[ln p(s)] - E[ln q(s)]``."""
        a0, b0, a, b = self.alpha0, self.beta0, self.alpha, self.beta
        return float(
            a0 * np.log(b0) - a * np.log(b) - gammaln(a0) + gammaln(a)
            + (a0 - a) * self.e_log_s + (b - b0) * self.e_s
        )

    # -- projections -------------------------------------------------------------
    def pair_moments(self, D, residual) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of ``f_a - f_b`` given rows ``D = A[a] - A[b]``."""
        mean = D @ self.mean
        if self.diagonal:
            quad = (D * D) @ self.cov
        else:
            quad = np.einsum("ij,ij->i", D @ self.cov, D)
        return mean, np.maximum(residual / self.e_s + quad, 0.0)

    def point_moments(self, R, residual) -> tuple[np.ndarray, np.ndarray]:
        mean = R @ self.mean
        if self.diagonal:
            quad = (R * R) @ self.cov
        else:
            quad = np.einsum("ij,ij->i", R @ self.cov, R)
        return mean, np.maximum(residual / self.e_s + quad, 0.0)

    def is_psd(self) -> bool:
        if self.diagonal:
            return bool(np.all(self.cov > 0))
        try:
            np.linalg.cholesky(self.cov)
            return bool(np.allclose(self.cov, self.cov.T, atol=1e-12, rtol=0))
        except np.linalg.LinAlgError:
            return False

    def state_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "alpha": self.alpha,
            "beta": self.beta,
            "alpha0": self.alpha0,
            "beta0": self.beta0,
            "diagonal": self.diagonal,
        }

    def load_state(self, d: dict) -> None:
        self.mean = np.asarray(d["mean"], dtype=float)
        cov = np.asarray(d["cov"], dtype=float)
        if cov.shape != ((self.M,) if self.diagonal else (self.M, self.M)):
            raise InvalidInputError("stored covariance has the wrong shape")
        self.cov = cov
        if self.diagonal:
            self.prec = 1.0 / cov
        else:
            L, _ = jittered_cholesky(cov, jitter=1e-15)
            self.prec = cho_solve((L, True), np.eye(self.M))
        self.alpha = float(d["alpha"])
        self.beta = float(d["beta"])
        self.alpha0 = float(d["alpha0"])
        self.beta0 = float(d["beta0"])

    def nbytes(self) -> int:
        return int(self.mean.nbytes + self.cov.nbytes + self.prec.nbytes + 4 * 8)


def accumulate_info(design, weights) -> np.ndarray:
    """``design^T diag(weights) design``."""
    return design.T @ (weights[:, None] * design)


__all__ = [
    "SviSchedule",
    "BatchSampler",
    "InducingPrior",
    "FeatureSpace",
    "GaussianFactor",
    "Snapshot",
    "accumulate_info",
]
