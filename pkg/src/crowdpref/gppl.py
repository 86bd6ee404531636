"""Single-user Gaussian process preference learning trained by SVI."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidConfigError, InvalidInputError
from .inducing import DEFAULT_M, InducingSet, select_inducing
from .kernels import KernelConfig, as_features, covariance_matrix, median_heuristic, pair_covariance
from .likelihood import (
    BatchWorkspace,
    estimate_beta_prior,
    expected_log_likelihood,
    norm_cdf,
    observation_noise,
    plugin_log_likelihood,
    signed_slopes,
)
from .svi import BatchSampler, FeatureSpace, GaussianFactor, InducingPrior, SviSchedule, accumulate_info

DEFAULT_ALPHA0 = 1.0
DEFAULT_BETA0 = 100.0
ELBO_CHUNK = 4096


@dataclass
class FitLog:
    """Diagnostics collected during a fit (not part of the model state)."""

    elbo: list = field(default_factory=list)
    iteration_seconds: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    converged: bool = False

    def elbo_values(self) -> np.ndarray:
        return np.array([v for _, v in self.elbo])


@dataclass
class GPPLState:
    """Variational posterior of one utility function.

    Only quantities whose size depends on M and D are kept; caches tied to
    the training data live in a ``FeatureSpace``.
    """

    prior: InducingPrior
    factor: GaussianFactor
    gamma: float
    lam: float
    derivative: str = "probit"
    iteration: int = 0

    @property
    def kernel(self) -> KernelConfig:
        return self.prior.cfg

    @property
    def M(self) -> int:
        return self.prior.M

    @property
    def f_hat_m(self) -> np.ndarray:
        return self.factor.mean

    @property
    def S(self) -> np.ndarray:
        return self.factor.cov_matrix()

    @property
    def S_inv(self) -> np.ndarray:
        return self.factor.prec

    @property
    def alpha(self) -> float:
        return self.factor.alpha

    @property
    def beta(self) -> float:
        return self.factor.beta

    @property
    def e_s(self) -> float:
        return self.factor.e_s

    def nbytes(self) -> int:
        return self.prior.nbytes() + self.factor.nbytes()


def _check_pairs(a, b, y, n_items):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    y = np.asarray(y)
    if not (a.shape == b.shape == y.shape) or a.ndim != 1:
        raise InvalidInputError("pair arrays must be 1-D and of equal length")
    if a.size and (a.min() < 0 or b.min() < 0 or a.max() >= n_items or b.max() >= n_items):
        raise InvalidInputError("pair index out of range")
    if np.any(a == b):
        raise InvalidInputError("a pair compares an item with itself")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0 or 1")
    return a, b, y.astype(float)


def prior_beta_parameters(space: FeatureSpace, factor: GaussianFactor, a, b):
    """Beta parameters matched to Phi(z) under the current q, with the variance of z averaged over pairs.

    Called once before training, when q still has its initial moments.
    """
    total = 0.0
    for sl in _pair_chunks(len(a)):
        D = space.rows(a[sl]) - space.rows(b[sl])
        _, var = factor.pair_moments(D, space.nystrom_pair_residual(a[sl], b[sl], D))
        total += float(np.sum(var))
    return estimate_beta_prior(0.0, max(total / len(a), 1e-12))


def build_workspace(space: FeatureSpace, factor: GaussianFactor, a, b, y, gamma, lam, kind="probit", Q=None):
    """Linearise the likelihood of the given pairs at the current posterior.

    Returns the workspace and the batch rows ``A_i`` it refers to.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    items, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    loc_a, loc_b = inv[: a.size], inv[a.size:]
    A_batch = space.rows(items)
    D = A_batch[loc_a] - A_batch[loc_b]
    resid = space.nystrom_pair_residual(a, b, D)
    mean, var = factor.pair_moments(D, resid)
    zh = mean / np.sqrt(1.0 + var)
    ws_var = var
    if Q is None:
        Q = observation_noise(gamma, lam, y)
    ws = BatchWorkspace(
        items=items, loc_a=loc_a, loc_b=loc_b, y=np.asarray(y, dtype=float), z_hat=zh,
        slopes=signed_slopes(zh, y, kind) / np.sqrt(1.0 + var), Q_diag=np.asarray(Q, dtype=float) * np.ones(a.size),
        gamma=gamma, lam=lam, mean_diff=mean,
    )
    return ws, A_batch, resid, ws_var


def relinearise(ws: BatchWorkspace, A_batch, resid, factor: GaussianFactor, kind="probit", damping: float = 1.0,
                prev_var=None):
    """Move the expansion point towards the current posterior moments of z.

    ``damping`` is the fraction of the move taken (1 = full step). Returns
    the workspace and the variance used at the new expansion point.
    """
    D = A_batch[ws.loc_a] - A_batch[ws.loc_b]
    mean, var = factor.pair_moments(D, resid)
    if damping < 1.0 and ws.mean_diff is not None:
        mean = ws.mean_diff + damping * (mean - ws.mean_diff)
        if prev_var is not None:
            var = prev_var + damping * (var - prev_var)
    zh = mean / np.sqrt(1.0 + var)
    ws.z_hat = zh
    ws.slopes = signed_slopes(zh, ws.y, kind) / np.sqrt(1.0 + var)
    ws.mean_diff = mean
    return ws, var


class InnerLoop:
    """Convergence test and step damping for the linearisation loop.

    The step towards the new expansion point is halved whenever the largest
    change in Phi(z_hat) fails to shrink, which breaks the two-cycles a plain
    fixed-point iteration can fall into.
    """

    def __init__(self, tol: float, min_damping: float = 1.0 / 64):
        self.tol = tol
        self.min_damping = min_damping
        self.damping = 1.0
        self.prev_phi = None
        self.prev_change = np.inf

    def converged(self, z_hat) -> bool:
        phi = norm_cdf(z_hat)
        if self.prev_phi is None:
            self.prev_phi = phi
            return False
        change = float(np.max(np.abs(phi - self.prev_phi))) if phi.size else 0.0
        self.prev_phi = phi
        if change < self.tol:
            return True
        if change >= self.prev_change:
            self.damping = max(self.min_damping, 0.5 * self.damping)
        self.prev_change = change
        return False


def gppl_update_batch(state: GPPLState, A_batch, ws: BatchWorkspace, rho: float, pi: float, snapshot=None):
    """Natural-gradient step on q(f_m) from one linearised batch.

    ``snapshot`` holds the natural parameters the step blends from (the
    state at the start of the outer iteration); by default the current state.
    """
    factor = state.factor
    snap = factor.snapshot() if snapshot is None else snapshot
    D = A_batch[ws.loc_a] - A_batch[ws.loc_b]
    design = ws.slopes[:, None] * D
    w = 1.0 / ws.Q_diag
    factor.natural_update(snap, rho, pi, accumulate_info(design, w), design.T @ (w * ws.pseudo))
    return state


def gppl_update_scale(state: GPPLState):
    """Gamma update for the inverse scale; returns ``(alpha, beta, E[s], E[ln s])``."""
    return state.factor.update_scale()


def _pair_chunks(n, size=ELBO_CHUNK):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def likelihood_term(space: FeatureSpace, factor: GaussianFactor, a, b, y, likelihood="quadrature") -> float:
    total = 0.0
    for sl in _pair_chunks(len(a)):
        D = space.rows(a[sl]) - space.rows(b[sl])
        resid = space.nystrom_pair_residual(a[sl], b[sl], D)
        mean, var = factor.pair_moments(D, resid)
        if likelihood == "quadrature":
            total += float(np.sum(expected_log_likelihood(mean, var, y[sl])))
        elif likelihood == "plugin":
            total += float(np.sum(plugin_log_likelihood(mean, y[sl])))
        else:
            raise InvalidConfigError(f"unknown likelihood convention {likelihood!r}")
    return total


def gppl_elbo(state: GPPLState, items, a, b, y, space: FeatureSpace | None = None, likelihood="quadrature") -> float:
    """Evidence lower bound.

    The likelihood term is ``E[ln Phi((2y-1) z)]`` by Gauss-Hermite quadrature
    over the posterior of ``z``; ``likelihood="plugin"`` evaluates it at the
    posterior mean instead.
    """
    if space is None:
        space = _space_for(state.prior, items)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    ll = likelihood_term(space, state.factor, a, b, y, likelihood) if a.size else 0.0
    return ll + state.factor.gaussian_term() + state.factor.gamma_term()


def _space_for(prior: InducingPrior, items, n=None, is_training_set=False) -> FeatureSpace:
    if prior.identity and prior.Z is None:
        return FeatureSpace(prior, None, n=n if n is not None else prior.M)
    return FeatureSpace(prior, items, is_training_set=is_training_set)


def make_prior(items, kernel: KernelConfig, inducing: InducingSet | None):
    """Inducing prior for ``items``; returns ``(prior, is_training_set)``."""
    if kernel.is_identity:
        X = None if items is None else np.asarray(items, dtype=float)
        if X is not None and X.ndim == 2 and X.shape[1] > 0:
            return InducingPrior(kernel, X), True
        n = X.shape[0] if X is not None else None
        return InducingPrior(kernel, None, M=n), True
    if inducing is None:
        inducing = InducingSet(as_features(items).copy(), is_training_set=True)
    return InducingPrior(kernel, inducing.points), inducing.is_training_set


class _Convergence:
    def __init__(self, tol):
        self.tol = tol
        self.prev = None
        self.hits = 0

    def update(self, value) -> bool:
        if self.prev is not None:
            rel = abs(value - self.prev) / max(abs(value), 1e-300)
            self.hits = self.hits + 1 if rel < self.tol else 0
        self.prev = value
        return self.hits >= 2


def gppl_fit(
    items,
    a,
    b,
    y,
    kernel: KernelConfig,
    inducing: InducingSet | None = None,
    alpha0: float = DEFAULT_ALPHA0,
    beta0: float = DEFAULT_BETA0,
    schedule: SviSchedule | None = None,
    derivative: str = "probit",
    log: FitLog | None = None,
    on_update=None,
    n_items: int | None = None,
) -> GPPLState:
    """Fit q(f_m, s) by stochastic variational inference.

    ``on_update(name, factor)`` is called after every factor update. ``log``
    collects the ELBO trace (including the initial value at iteration 0) and
    per-iteration wall times excluding ELBO evaluation.
    """
    schedule = schedule or SviSchedule()
    log = log if log is not None else FitLog()
    prior, is_train = make_prior(items, kernel, inducing)
    space = _space_for(prior, items, n=n_items, is_training_set=is_train)
    a, b, y = _check_pairs(a, b, y, space.n)
    if a.size == 0:
        raise InvalidInputError("dataset has no pairs")

    factor = GaussianFactor(prior, alpha0, beta0)
    gamma, lam = prior_beta_parameters(space, factor, a, b)
    Q = observation_noise(gamma, lam, y)
    state = GPPLState(prior, factor, gamma, lam, derivative)
    run_svi_gppl(state, space, a, b, y, Q, schedule, log, on_update)
    return state


def run_svi_gppl(state, space, a, b, y, Q, schedule, log, on_update=None):
    factor = state.factor
    P = a.size
    sampler = BatchSampler(P, schedule.batch_size, schedule.seed)
    conv = _Convergence(schedule.convergence_tol)
    log.elbo.append((0, gppl_elbo(state, None, a, b, y, space)))
    conv.update(log.elbo[-1][1])
    for i in range(1, schedule.max_iterations + 1):
        t0 = time.perf_counter()
        idx = sampler.next()
        rho = schedule.rho(i)
        pi = SviSchedule.pi(P, idx.size)
        ws, A_batch, resid, var = build_workspace(
            space, factor, a[idx], b[idx], y[idx], state.gamma, state.lam, state.derivative, Q[idx]
        )
        snap = factor.snapshot()
        inner = InnerLoop(schedule.inner_tol)
        n_inner = 0
        while True:
            if n_inner:
                ws, var = relinearise(ws, A_batch, resid, factor, state.derivative, inner.damping, var)
            if inner.converged(ws.z_hat) or n_inner >= schedule.inner_max:
                break
            gppl_update_batch(state, A_batch, ws, rho, pi, snap)
            n_inner += 1
            if on_update is not None:
                on_update("f", factor)
        gppl_update_scale(state)
        state.iteration = i
        log.iteration_seconds.append(time.perf_counter() - t0)
        log.inner_iterations.append(n_inner)
        if i % schedule.elbo_every == 0 or i == schedule.max_iterations:
            value = gppl_elbo(state, None, a, b, y, space)
            log.elbo.append((i, value))
            if conv.update(value):
                log.converged = True
                break
    return state


def _stored_or_nugget_cov(prior: InducingPrior, Xs) -> np.ndarray:
    K = covariance_matrix(Xs, None, prior.cfg)
    if prior.jitter > 0:
        same = np.all(Xs[:, None, :] == Xs[None, :, :], axis=2)
        K = K + prior.jitter * same
    return K


def _resolve_targets(prior: InducingPrior, X_star):
    """Projection rows for test inputs (features, or indices for index-addressed identity priors)."""
    if prior.identity and prior.Z is None:
        idx = np.asarray(X_star, dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= prior.M):
            raise InvalidInputError("entity index out of range")
        R = np.zeros((idx.size, prior.M))
        R[np.arange(idx.size), idx] = 1.0
        return R, None
    Xs = as_features(X_star)
    return prior.project(Xs), Xs


def gppl_predict(state: GPPLState, X_star, full_cov: bool = True):
    """Posterior mean and covariance of the utilities at ``X_star``.

    ``C* = K**/E[s] + A (S - K_mm/E[s]) A^T`` with ``A = K_*m K_mm^{-1}``.
    With ``full_cov=False`` only the diagonal is returned.
    """
    prior = state.prior
    A, Xs = _resolve_targets(prior, X_star)
    f = A @ state.factor.mean
    es = state.factor.e_s
    inner = state.factor.cov_matrix() - prior.K_mm / es
    if full_cov:
        if Xs is None:
            K = np.eye(A.shape[0]) if A.shape[0] == 0 else (A @ A.T)
        else:
            K = _stored_or_nugget_cov(prior, Xs) if not prior.identity else covariance_matrix(Xs, None, prior.cfg)
        C = K / es + A @ inner @ A.T
        return f, 0.5 * (C + C.T)
    diag = prior.prior_diag() / es + np.einsum("ij,ij->i", A @ inner, A)
    return f, diag


def gppl_predict_pairs(state: GPPLState, X_star, a, b) -> np.ndarray:
    """Probability that item ``a`` beats item ``b`` for each pair of rows of ``X_star``.

    Only the moments of the listed pairs are formed, never the full test covariance.
    """
    prior = state.prior
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    A, Xs = _resolve_targets(prior, X_star)
    D = A[a] - A[b]
    es = state.factor.e_s
    if Xs is None:
        kdiff = 2.0 * (a != b)
    elif prior.identity:
        kdiff = 2.0 * ~np.all(Xs[a] == Xs[b], axis=1)
    else:
        same = np.all(Xs[a] == Xs[b], axis=1)
        kdiff = 2.0 * prior.prior_diag() - 2.0 * (pair_covariance(Xs, a, b, prior.cfg) + prior.jitter * same)
    inner = state.factor.cov_matrix() - prior.K_mm / es
    var = kdiff / es + np.einsum("ij,ij->i", D @ inner, D)
    mean = D @ state.factor.mean
    return norm_cdf(mean / np.sqrt(1.0 + np.maximum(var, 0.0)))


def resolve_kernel(kernel, X) -> KernelConfig:
    """Kernel config from a family name (median-heuristic length-scales) or a ready config."""
    if isinstance(kernel, KernelConfig):
        return kernel
    family = "matern32" if kernel is None else str(kernel)
    if family.lower() in ("identity", "none"):
        return KernelConfig("identity")
    return KernelConfig(family, median_heuristic(X))


class GPPL:
    """Estimator wrapper around ``gppl_fit`` and the prediction functions."""

    def __init__(
        self,
        kernel="matern32",
        M: int = DEFAULT_M,
        alpha0: float = DEFAULT_ALPHA0,
        beta0: float = DEFAULT_BETA0,
        schedule: SviSchedule | None = None,
        derivative: str = "probit",
        inducing_seed: int = 0,
    ):
        self.kernel = kernel
        self.M = M
        self.alpha0 = alpha0
        self.beta0 = beta0
        self.schedule = schedule or SviSchedule()
        self.derivative = derivative
        self.inducing_seed = inducing_seed
        self.state_: GPPLState | None = None
        self.log_: FitLog | None = None

    def fit(self, items, a, b, y, on_update=None) -> "GPPL":
        items = as_features(items) if np.asarray(items).size else np.zeros((np.asarray(items).shape[0], 0))
        cfg = resolve_kernel(self.kernel, items)
        inducing = None if cfg.is_identity else select_inducing(items, self.M, self.inducing_seed)
        self.log_ = FitLog()
        self.state_ = gppl_fit(
            items, a, b, y, cfg, inducing, self.alpha0, self.beta0, self.schedule,
            self.derivative, self.log_, on_update,
        )
        return self

    def _require(self):
        if self.state_ is None:
            raise InvalidInputError("model is not fitted")
        return self.state_

    def predict(self, X_star, full_cov: bool = True):
        return gppl_predict(self._require(), X_star, full_cov)

    def predict_f(self, X_star) -> np.ndarray:
        return gppl_predict(self._require(), X_star, full_cov=False)[0]

    def predict_pairs(self, X_star, a, b) -> np.ndarray:
        return gppl_predict_pairs(self._require(), X_star, a, b)

    def elbo(self, items, a, b, y) -> float:
        return gppl_elbo(self._require(), items, a, b, y)
