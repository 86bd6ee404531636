"""crowdGPPL: a consensus utility plus C latent item/user components.

``F = V^T W + t 1^T``. Each of ``t``, ``v_c`` and ``w_c`` has its own
inducing-point Gaussian factor and Gamma inverse scale. User components use
either a user kernel (when user features exist) or an identity prior that
addresses users by index.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidConfigError, InvalidInputError
from .gppl import FitLog, InnerLoop, _Convergence, _pair_chunks
from .inducing import InducingSet
from .kernels import KernelConfig, as_features, covariance_matrix, identity_kernel, pair_covariance
from .likelihood import (
    estimate_beta_prior,
    norm_cdf,
    observation_noise,
    observed_probability,
    plugin_log_likelihood,
    signed_slopes,
)
from .svi import BatchSampler, FeatureSpace, GaussianFactor, InducingPrior, SviSchedule, accumulate_info

INIT_JITTER = 1e-4


@dataclass
class CrowdHyperparams:
    alpha0_t: float = 1.0
    beta0_t: float = 100.0
    alpha0_v: float = 1.0
    beta0_v: float = 100.0
    alpha0_w: float = 1.0
    beta0_w: float = 10.0
    C: int = 20
    user_kernel_split: int | None = None

    def __post_init__(self):
        for name in ("alpha0_t", "beta0_t", "alpha0_v", "beta0_v", "alpha0_w", "beta0_w"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.C < 0:
            raise InvalidConfigError("C must be non-negative")
        if self.user_kernel_split is not None and not 0 <= self.user_kernel_split <= self.C:
            raise InvalidConfigError("user_kernel_split must lie in [0, C]")

    def kernel_components(self, have_user_features: bool) -> int:
        """Number of leading components that use the user kernel."""
        if not have_user_features:
            return 0
        return self.C if self.user_kernel_split is None else self.user_kernel_split


@dataclass
class CrowdState:
    item_prior: InducingPrior
    user_prior: InducingPrior | None
    index_prior: InducingPrior
    t: GaussianFactor
    v: list
    w: list
    hyper: CrowdHyperparams
    gamma: float
    lam: float
    derivative: str = "probit"
    iteration: int = 0

    @property
    def C(self) -> int:
        return len(self.v)

    @property
    def n_users(self) -> int:
        return self.index_prior.M

    def uses_user_kernel(self, c: int) -> bool:
        return self.w[c].prior is self.user_prior

    def factors(self):
        yield "t", self.t
        for c in range(self.C):
            yield f"v{c}", self.v[c]
            yield f"w{c}", self.w[c]

    def nbytes(self) -> int:
        total = self.item_prior.nbytes() + self.index_prior.nbytes()
        if self.user_prior is not None:
            total += self.user_prior.nbytes()
        return total + sum(f.nbytes() for _, f in self.factors())


def crowd_utility(v_cols, w_cols, t_vals, a: int, j: int) -> float:
    """``sum_c v_c(a) w_c(j) + t(a)``; ``v_cols`` is (items, C), ``w_cols`` (users, C)."""
    v_cols = np.asarray(v_cols, dtype=float).reshape(len(t_vals), -1)
    w_cols = np.asarray(w_cols, dtype=float)
    if v_cols.shape[1] == 0:
        return float(t_vals[a])
    w_cols = w_cols.reshape(-1, v_cols.shape[1])
    return float(v_cols[a] @ w_cols[j] + t_vals[a])


def compute_H(z_hat, y, users, batch_users, kind="probit") -> np.ndarray:
    """Per-user derivative matrix: one signed slope per row, in the pair's user column."""
    users = np.asarray(users)
    batch_users = np.asarray(batch_users)
    H = np.zeros((users.size, batch_users.size))
    col = np.searchsorted(batch_users, users)
    if np.any(col >= batch_users.size) or np.any(batch_users[np.minimum(col, batch_users.size - 1)] != users):
        raise InvalidInputError("pair user missing from batch users")
    H[np.arange(users.size), col] = signed_slopes(z_hat, y, kind)
    return H


def component_variance(state: CrowdState, c: int) -> float:
    """Plug-in ``1 / (E[s_v] E[s_w])`` for component ``c``."""
    return (state.v[c].beta / state.v[c].alpha) * (state.w[c].beta / state.w[c].alpha)


def crowd_update_scales(state: CrowdState):
    """Gamma updates for every factor; returns ``{name: (alpha, beta, E[s], E[ln s])}``."""
    return {name: f.update_scale() for name, f in state.factors()}


# --------------------------------------------------------------------------- fit-time caches


class _UserSpace:
    """Maps batch users to rows for kernel and identity user factors."""

    def __init__(self, state: CrowdState, user_features, n_users):
        self.n = n_users
        self.kernel_space = None
        if state.user_prior is not None:
            self.kernel_space = FeatureSpace(state.user_prior, user_features, is_training_set=True)

    def rows(self, factor: GaussianFactor, users):
        if factor.diagonal:
            return None
        return self.kernel_space.rows(users)

    def residual(self, factor: GaussianFactor, users):
        if factor.diagonal:
            return np.zeros(np.size(users))
        return self.kernel_space.nystrom_point_residual(users)


def _user_moments(factor: GaussianFactor, rows, users, resid):
    """Mean and variance of ``w_c`` for each listed user."""
    if factor.diagonal:
        return factor.mean[users], factor.cov[users]
    return factor.point_moments(rows, resid)


@dataclass
class CrowdBatch:
    """Linearisation of one crowd mini-batch."""

    u: np.ndarray
    y: np.ndarray
    Q: np.ndarray
    items: np.ndarray
    D: np.ndarray
    item_resid: np.ndarray
    users: np.ndarray
    loc_u: np.ndarray
    user_rows: dict
    user_resid: dict
    # per-factor moments, refreshed as factors change
    mean_t: np.ndarray = None
    var_t: np.ndarray = None
    delta: list = field(default_factory=list)
    var_delta: list = field(default_factory=list)
    w_mean: list = field(default_factory=list)
    w_var: list = field(default_factory=list)
    # expansion point
    z_exp: np.ndarray = None
    var_exp: np.ndarray = None
    z_hat: np.ndarray = None
    slopes: np.ndarray = None
    residual: np.ndarray = None

    def z_mean(self) -> np.ndarray:
        z = self.mean_t.copy()
        for c in range(len(self.delta)):
            z += self.w_mean[c][self.loc_u] * self.delta[c]
        return z

    def z_var(self) -> np.ndarray:
        var = self.var_t.copy()
        for c in range(len(self.delta)):
            wm = self.w_mean[c][self.loc_u]
            wv = self.w_var[c][self.loc_u]
            var += (wm * wm + wv) * self.var_delta[c] + wv * self.delta[c] ** 2
        return var


def _refresh_t(state, batch):
    batch.mean_t, batch.var_t = state.t.pair_moments(batch.D, batch.item_resid)


def _refresh_v(state, batch, c):
    batch.delta[c], batch.var_delta[c] = state.v[c].pair_moments(batch.D, batch.item_resid)


def _refresh_w(state, batch, c):
    f = state.w[c]
    batch.w_mean[c], batch.w_var[c] = _user_moments(f, batch.user_rows[c], batch.users, batch.user_resid[c])


def _set_expansion(batch, z, var, y, kind):
    batch.z_exp = z
    batch.var_exp = var
    sd = np.sqrt(1.0 + var)
    batch.z_hat = z / sd
    batch.slopes = signed_slopes(batch.z_hat, y, kind) / sd
    batch.residual = 1.0 - observed_probability(batch.z_hat, y)


def build_crowd_batch(state: CrowdState, item_space: FeatureSpace, user_space: _UserSpace, u, a, b, y, Q):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    u = np.asarray(u, dtype=np.int64)
    items, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    A_batch = item_space.rows(items)
    D = A_batch[inv[: a.size]] - A_batch[inv[a.size:]]
    resid = item_space.nystrom_pair_residual(a, b, D)
    users, loc_u = np.unique(u, return_inverse=True)
    rows, uresid = {}, {}
    for c, f in enumerate(state.w):
        rows[c] = user_space.rows(f, users)
        uresid[c] = user_space.residual(f, users)
    batch = CrowdBatch(u=u, y=np.asarray(y, dtype=float), Q=np.asarray(Q, dtype=float), items=items, D=D,
                       item_resid=resid, users=users, loc_u=loc_u, user_rows=rows, user_resid=uresid)
    C = state.C
    batch.delta = [None] * C
    batch.var_delta = [None] * C
    batch.w_mean = [None] * C
    batch.w_var = [None] * C
    _refresh_t(state, batch)
    for c in range(C):
        _refresh_v(state, batch, c)
        _refresh_w(state, batch, c)
    _set_expansion(batch, batch.z_mean(), batch.z_var(), batch.y, state.derivative)
    return batch


def _pseudo(batch, own):
    """Pseudo-observation for one factor given its own current contribution to z."""
    return batch.residual + batch.slopes * (batch.z_exp - batch.z_mean() + own)


def crowd_update_consensus(state: CrowdState, batch: CrowdBatch, rho, pi, snapshot=None):
    f = state.t
    snap = f.snapshot() if snapshot is None else snapshot
    design = batch.slopes[:, None] * batch.D
    q = 1.0 / batch.Q
    pseudo = _pseudo(batch, batch.mean_t)
    f.natural_update(snap, rho, pi, accumulate_info(design, q), design.T @ (q * pseudo))
    _refresh_t(state, batch)
    return f


def crowd_update_item_component(state: CrowdState, c: int, batch: CrowdBatch, rho, pi, snapshot=None):
    f = state.v[c]
    snap = f.snapshot() if snapshot is None else snapshot
    wm = batch.w_mean[c][batch.loc_u]
    wv = batch.w_var[c][batch.loc_u]
    design = batch.slopes[:, None] * batch.D
    q = 1.0 / batch.Q
    pseudo = _pseudo(batch, wm * batch.delta[c])
    info = accumulate_info(design, q * (wm * wm + wv))
    f.natural_update(snap, rho, pi, info, design.T @ (q * wm * pseudo))
    _refresh_v(state, batch, c)
    return f


def crowd_update_user_component(state: CrowdState, c: int, batch: CrowdBatch, rho, pi, snapshot=None):
    f = state.w[c]
    snap = f.snapshot() if snapshot is None else snapshot
    d = batch.delta[c]
    e_d2 = d * d + batch.var_delta[c]
    g = batch.slopes
    q = 1.0 / batch.Q
    pseudo = _pseudo(batch, batch.w_mean[c][batch.loc_u] * d)
    n_u = batch.users.size
    info_u = np.bincount(batch.loc_u, weights=g * g * q * e_d2, minlength=n_u)
    eta_u = np.bincount(batch.loc_u, weights=g * q * d * pseudo, minlength=n_u)
    if f.diagonal:
        info = np.zeros(f.M)
        eta = np.zeros(f.M)
        info[batch.users] = info_u
        eta[batch.users] = eta_u
    else:
        R = batch.user_rows[c]
        info = accumulate_info(R, info_u)
        eta = R.T @ eta_u
    f.natural_update(snap, rho, pi, info, eta)
    _refresh_w(state, batch, c)
    return f


# --------------------------------------------------------------------------- bound


def _all_user_moments(state: CrowdState, user_space: _UserSpace, users):
    out = []
    for c, f in enumerate(state.w):
        rows = user_space.rows(f, users)
        out.append(_user_moments(f, rows, users, user_space.residual(f, users)))
    return out


def crowd_mean_z(state: CrowdState, item_space: FeatureSpace, user_space: _UserSpace, u, a, b) -> np.ndarray:
    """Posterior mean of ``F_a,u - F_b,u`` for each pair."""
    out = np.empty(len(a))
    users = np.arange(user_space.n)
    w_means = [m for m, _ in _all_user_moments(state, user_space, users)]
    for sl in _pair_chunks(len(a)):
        D = item_space.rows(a[sl]) - item_space.rows(b[sl])
        z = D @ state.t.mean
        for c in range(state.C):
            z += w_means[c][u[sl]] * (D @ state.v[c].mean)
        out[sl] = z
    return out


def crowd_elbo(state: CrowdState, item_space, user_space, u, a, b, y) -> float:
    """Lower bound with the likelihood evaluated at the posterior means."""
    ll = 0.0
    if len(a):
        ll = float(np.sum(plugin_log_likelihood(crowd_mean_z(state, item_space, user_space, u, a, b), y)))
    return ll + sum(f.gaussian_term() + f.gamma_term() for _, f in state.factors())


# --------------------------------------------------------------------------- fit


def _check_crowd_pairs(u, a, b, y, n_items, n_users):
    u = np.asarray(u, dtype=np.int64)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    y = np.asarray(y)
    if not (u.shape == a.shape == b.shape == y.shape) or a.ndim != 1:
        raise InvalidInputError("pair arrays must be 1-D and of equal length")
    if a.size == 0:
        raise InvalidInputError("dataset has no pairs")
    if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n_items:
        raise InvalidInputError("item index out of range")
    if u.min() < 0 or u.max() >= n_users:
        raise InvalidInputError("user index out of range")
    if np.any(a == b):
        raise InvalidInputError("a pair compares an item with itself")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0 or 1")
    return u, a, b, y.astype(float)


def init_crowd_state(items, user_features, n_users, item_kernel, user_kernel, item_inducing, user_inducing,
                     hyper: CrowdHyperparams, seed=0, derivative="probit") -> CrowdState:
    from .gppl import make_prior

    item_prior, _ = make_prior(items, item_kernel, item_inducing)
    have_users = user_features is not None and np.asarray(user_features).ndim == 2 \
        and np.asarray(user_features).shape[1] > 0 and user_kernel is not None and not user_kernel.is_identity
    n_kernel = hyper.kernel_components(have_users)
    user_prior = None
    if n_kernel > 0:
        pts = user_inducing.points if user_inducing is not None else as_features(user_features)
        user_prior = InducingPrior(user_kernel, pts)
    index_prior = InducingPrior(identity_kernel(), None, M=n_users)
    rng = np.random.default_rng(seed)
    t = GaussianFactor(item_prior, hyper.alpha0_t, hyper.beta0_t)
    v, w = [], []
    for c in range(hyper.C):
        v.append(GaussianFactor(item_prior, hyper.alpha0_v, hyper.beta0_v,
                                mean=INIT_JITTER * rng.standard_normal(item_prior.M)))
        if c < n_kernel:
            w.append(GaussianFactor(user_prior, hyper.alpha0_w, hyper.beta0_w))
        else:
            w.append(GaussianFactor(index_prior, hyper.alpha0_w, hyper.beta0_w, diagonal=True))
    return CrowdState(item_prior, user_prior, index_prior, t, v, w, hyper, 0.0, 0.0, derivative)


def crowd_prior_beta(state: CrowdState, item_space: FeatureSpace, user_space: _UserSpace, u, a, b):
    """Beta parameters matched to Phi(z) under the Gaussian implied by the current factor moments.

    The variance of z is averaged over pairs; called once before training.
    """
    total = 0.0
    for sl in _pair_chunks(len(a)):
        batch = build_crowd_batch(state, item_space, user_space, u[sl], a[sl], b[sl], np.ones(a[sl].size),
                                  np.ones(a[sl].size))
        total += float(np.sum(batch.z_var()))
    return estimate_beta_prior(0.0, max(total / len(a), 1e-12))


def crowd_fit(
    items,
    users,
    u,
    a,
    b,
    y,
    item_kernel: KernelConfig,
    user_kernel: KernelConfig | None = None,
    item_inducing: InducingSet | None = None,
    user_inducing: InducingSet | None = None,
    hyper: CrowdHyperparams | None = None,
    schedule: SviSchedule | None = None,
    n_users: int | None = None,
    derivative: str = "probit",
    log: FitLog | None = None,
    on_update=None,
) -> CrowdState:
    """Fit crowdGPPL by SVI.

    Inside each linearisation sweep the consensus is updated first, then for
    every component the item factor, its scale, the user factor and its
    scale; the consensus scale is updated after the sweep loop.
    """
    hyper = hyper or CrowdHyperparams()
    schedule = schedule or SviSchedule()
    log = log if log is not None else FitLog()
    items = np.asarray(items, dtype=float)
    if n_users is None:
        n_users = int(np.max(u)) + 1 if users is None or np.asarray(users).size == 0 else np.asarray(users).shape[0]
    state = init_crowd_state(items, users, n_users, item_kernel, user_kernel, item_inducing, user_inducing,
                             hyper, schedule.seed, derivative)
    from .gppl import _space_for

    item_space = _space_for(state.item_prior, items, n=items.shape[0],
                            is_training_set=item_inducing is None or item_inducing.is_training_set)
    u, a, b, y = _check_crowd_pairs(u, a, b, y, item_space.n, n_users)
    user_space = _UserSpace(state, users, n_users)
    state.gamma, state.lam = crowd_prior_beta(state, item_space, user_space, u, a, b)
    Q = observation_noise(state.gamma, state.lam, y)
    run_svi_crowd(state, item_space, user_space, u, a, b, y, Q, schedule, log, on_update)
    return state


def run_svi_crowd(state, item_space, user_space, u, a, b, y, Q, schedule, log, on_update=None):
    P = a.size
    sampler = BatchSampler(P, schedule.batch_size, schedule.seed)
    conv = _Convergence(schedule.convergence_tol)
    notify = on_update or (lambda name, f: None)
    log.elbo.append((0, crowd_elbo(state, item_space, user_space, u, a, b, y)))
    conv.update(log.elbo[-1][1])
    for i in range(1, schedule.max_iterations + 1):
        t0 = time.perf_counter()
        idx = sampler.next()
        rho = schedule.rho(i)
        pi = SviSchedule.pi(P, idx.size)
        batch = build_crowd_batch(state, item_space, user_space, u[idx], a[idx], b[idx], y[idx], Q[idx])
        snap_t = state.t.snapshot()
        snap_v = [f.snapshot() for f in state.v]
        snap_w = [f.snapshot() for f in state.w]
        inner = InnerLoop(schedule.inner_tol)
        n_inner = 0
        while True:
            if n_inner:
                z, var = batch.z_mean(), batch.z_var()
                k = inner.damping
                if k < 1.0:
                    z = batch.z_exp + k * (z - batch.z_exp)
                    var = batch.var_exp + k * (var - batch.var_exp)
                _set_expansion(batch, z, var, batch.y, state.derivative)
            if inner.converged(batch.z_hat) or n_inner >= schedule.inner_max:
                break
            crowd_update_consensus(state, batch, rho, pi, snap_t)
            notify("t", state.t)
            for c in range(state.C):
                crowd_update_item_component(state, c, batch, rho, pi, snap_v[c])
                notify(f"v{c}", state.v[c])
                state.v[c].update_scale()
                _refresh_v(state, batch, c)
                crowd_update_user_component(state, c, batch, rho, pi, snap_w[c])
                notify(f"w{c}", state.w[c])
                state.w[c].update_scale()
                _refresh_w(state, batch, c)
            n_inner += 1
        state.t.update_scale()
        state.iteration = i
        log.iteration_seconds.append(time.perf_counter() - t0)
        log.inner_iterations.append(n_inner)
        if i % schedule.elbo_every == 0 or i == schedule.max_iterations:
            value = crowd_elbo(state, item_space, user_space, u, a, b, y)
            log.elbo.append((i, value))
            if conv.update(value):
                log.converged = True
                break
    return state


# --------------------------------------------------------------------------- prediction


@dataclass
class CrowdPrediction:
    F: np.ndarray
    t: np.ndarray
    t_var: np.ndarray
    v: np.ndarray
    v_var: np.ndarray
    w: np.ndarray
    omega: np.ndarray


def _item_rows(state: CrowdState, X_star):
    from .gppl import _resolve_targets

    return _resolve_targets(state.item_prior, X_star)


def _user_targets(state: CrowdState, user_features, user_index):
    """Means and variances of every w_c for the requested users: arrays (U*, C)."""
    C = state.C
    kernel_cs = [c for c in range(C) if not state.w[c].diagonal]
    ident_cs = [c for c in range(C) if state.w[c].diagonal]
    n = None
    if kernel_cs:
        if user_features is None:
            raise InvalidInputError("this model uses a user kernel: user features are required")
        Uf = as_features(user_features)
        n = Uf.shape[0]
        Aw = state.user_prior.project(Uf)
        resid = np.maximum(state.user_prior.prior_diag() - np.einsum("ij,ij->i", Aw @ state.user_prior.K_mm, Aw), 0.0)
    if ident_cs:
        if user_index is None:
            user_index = np.arange(state.n_users) if n is None else None
            if user_index is None:
                raise InvalidInputError("identity user components need user indices")
        user_index = np.asarray(user_index, dtype=np.int64)
        if user_index.size and (user_index.min() < 0 or user_index.max() >= state.n_users):
            raise InvalidInputError("user index out of range")
        if n is not None and user_index.size != n:
            raise InvalidInputError("user features and user indices disagree in length")
        n = user_index.size
    if n is None:
        n = state.n_users if user_index is None else np.asarray(user_index).size
    W = np.zeros((n, C))
    Om = np.zeros((n, C))
    for c in kernel_cs:
        W[:, c], Om[:, c] = state.w[c].point_moments(Aw, resid)
    for c in ident_cs:
        W[:, c] = state.w[c].mean[user_index]
        Om[:, c] = state.w[c].cov[user_index]
    return W, Om


def _factor_cov(prior: InducingPrior, factor: GaussianFactor, A, Xs):
    es = factor.e_s
    if Xs is None or prior.identity:
        K = A @ A.T if Xs is None else covariance_matrix(Xs, None, prior.cfg)
    else:
        same = np.all(Xs[:, None, :] == Xs[None, :, :], axis=2)
        K = covariance_matrix(Xs, None, prior.cfg) + prior.jitter * same
    C = K / es + A @ (factor.cov_matrix() - prior.K_mm / es) @ A.T
    return 0.5 * (C + C.T)


def _factor_var(prior: InducingPrior, factor: GaussianFactor, A):
    es = factor.e_s
    inner = factor.cov_matrix() - prior.K_mm / es
    return np.maximum(prior.prior_diag() / es + np.einsum("ij,ij->i", A @ inner, A), 0.0)


def crowd_predict(state: CrowdState, X_star, user_features=None, user_index=None) -> CrowdPrediction:
    """Posterior utilities for every (test item, test user) plus factor moments."""
    A, _ = _item_rows(state, X_star)
    t = A @ state.t.mean
    t_var = _factor_var(state.item_prior, state.t, A)
    C = state.C
    V = np.zeros((A.shape[0], C))
    V_var = np.zeros((A.shape[0], C))
    for c in range(C):
        V[:, c] = A @ state.v[c].mean
        V_var[:, c] = _factor_var(state.item_prior, state.v[c], A)
    W, Om = _user_targets(state, user_features, user_index)
    F = t[:, None] + V @ W.T
    return CrowdPrediction(F, t, t_var, V, V_var, W, Om)


def crowd_predict_cov(state: CrowdState, X_star, user: int, user_features=None, user_index=None):
    """Item covariance ``Lambda_u`` for one test user (position ``user`` in the user query)."""
    A, Xs = _item_rows(state, X_star)
    W, Om = _user_targets(state, user_features, user_index)
    Lam = _factor_cov(state.item_prior, state.t, A, Xs)
    for c in range(state.C):
        Cv = _factor_cov(state.item_prior, state.v[c], A, Xs)
        vh = A @ state.v[c].mean
        Lam += (Om[user, c] + W[user, c] ** 2) * Cv + Om[user, c] * np.outer(vh, vh)
    return Lam


def crowd_predict_pairs(state: CrowdState, X_star, a, b, pair_users, user_features=None, user_index=None):
    """``P(a beats b)`` for each pair's user; ``pair_users`` index the user query rows."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    pu = np.asarray(pair_users, dtype=np.int64)
    A, Xs = _item_rows(state, X_star)
    W, Om = _user_targets(state, user_features, user_index)
    D = A[a] - A[b]
    prior = state.item_prior
    if Xs is None:
        kdiff = 2.0 * (a != b)
    elif prior.identity:
        kdiff = 2.0 * ~np.all(Xs[a] == Xs[b], axis=1)
    else:
        same = np.all(Xs[a] == Xs[b], axis=1)
        kdiff = 2.0 * prior.prior_diag() - 2.0 * (pair_covariance(Xs, a, b, prior.cfg) + prior.jitter * same)

    def moments(f):
        es = f.e_s
        inner = f.cov_matrix() - prior.K_mm / es
        return D @ f.mean, np.maximum(kdiff / es + np.einsum("ij,ij->i", D @ inner, D), 0.0)

    mean, var = moments(state.t)
    for c in range(state.C):
        d, vd = moments(state.v[c])
        wm, wv = W[pu, c], Om[pu, c]
        mean = mean + wm * d
        var = var + (wm * wm + wv) * vd + wv * d * d
    return norm_cdf(mean / np.sqrt(1.0 + var))


class CrowdGPPL:
    """Estimator wrapper around ``crowd_fit`` and the prediction functions."""

    def __init__(self, item_kernel="matern32", user_kernel="matern32", M_items=500, M_users=500,
                 hyper: CrowdHyperparams | None = None, schedule: SviSchedule | None = None,
                 derivative="probit", inducing_seed=0):
        self.item_kernel = item_kernel
        self.user_kernel = user_kernel
        self.M_items = M_items
        self.M_users = M_users
        self.hyper = hyper or CrowdHyperparams()
        self.schedule = schedule or SviSchedule()
        self.derivative = derivative
        self.inducing_seed = inducing_seed
        self.state_: CrowdState | None = None
        self.log_: FitLog | None = None

    def fit(self, items, users, u, a, b, y, n_users=None, on_update=None) -> "CrowdGPPL":
        from .gppl import resolve_kernel
        from .inducing import select_inducing

        items = np.asarray(items, dtype=float)
        icfg = resolve_kernel(self.item_kernel, items)
        iind = None if icfg.is_identity else select_inducing(items, self.M_items, self.inducing_seed)
        ucfg, uind = None, None
        if users is not None and np.asarray(users).ndim == 2 and np.asarray(users).shape[1] > 0:
            ucfg = resolve_kernel(self.user_kernel, users)
            if not ucfg.is_identity:
                uind = select_inducing(users, self.M_users, self.inducing_seed)
        self.log_ = FitLog()
        self.state_ = crowd_fit(items, users, u, a, b, y, icfg, ucfg, iind, uind, self.hyper, self.schedule,
                                n_users, self.derivative, self.log_, on_update)
        self._train_users = users
        return self

    def _require(self):
        if self.state_ is None:
            raise InvalidInputError("model is not fitted")
        return self.state_

    def predict(self, X_star, user_features=None, user_index=None) -> CrowdPrediction:
        st = self._require()
        if user_features is None and user_index is None and st.user_prior is not None:
            user_features = self._train_users
        return crowd_predict(st, X_star, user_features, user_index)

    def predict_pairs(self, X_star, a, b, pair_users, user_features=None, user_index=None):
        st = self._require()
        if user_features is None and user_index is None and st.user_prior is not None:
            user_features = self._train_users
        return crowd_predict_pairs(st, X_star, a, b, pair_users, user_features, user_index)
