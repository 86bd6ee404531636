"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Noise settings for the simulations are inverse scales s: a smaller s gives a
larger utility variance and therefore cleaner labels. The grid below is the
one used for the directional comparisons; only its lowest entries are needed.
"""
import time

import numpy as np
import pytest
from scipy.stats import norm

from crowdpref import (
    GPPL,
    CrowdGPPL,
    CrowdHyperparams,
    GPPLPerUser,
    SimulationConfig,
    SviSchedule,
    component_variance,
    kendall_tau,
    match_components,
    simulate_crowd,
)
from crowdpref.bench import run_sweep, summarise
from crowdpref.crowd import crowd_fit
from crowdpref.gppl import FitLog, GPPLState, build_workspace, gppl_fit, gppl_update_batch
from crowdpref.inducing import select_inducing
from crowdpref.kernels import KernelConfig
from crowdpref.likelihood import linearization_row, pair_probability
from crowdpref.svi import FeatureSpace, GaussianFactor, InducingPrior

NOISE_LEVELS = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
REPEATS = 10


class PsdTracker:
    """``on_update`` hook that Cholesky-checks every posterior covariance."""

    def __init__(self):
        self.checks = 0
        self.failures = []

    def __call__(self, name, factor):
        self.checks += 1
        if factor.diagonal:
            ok = bool(np.all(factor.cov > 0))
        else:
            try:
                np.linalg.cholesky(factor.cov)
                ok = np.allclose(factor.cov, factor.cov.T)
            except np.linalg.LinAlgError:
                ok = False
        if not ok:
            self.failures.append(name)


PSD = PsdTracker()
PSD_CRITERIA = set()


def report(capsys, name, ok, detail, seconds=None, limit=None):
    within = seconds is None or seconds < limit
    passed = bool(ok) and within
    timing = "" if seconds is None else f" [{seconds:.1f}s, limit {limit:.0f}s]"
    with capsys.disabled():
        print(f"\n{name} {'PASS' if passed else 'FAIL'}: {detail}{timing}")
    return passed


def _crowd(seed, C=20):
    return CrowdGPPL(hyper=CrowdHyperparams(C=C), schedule=SviSchedule(seed=seed))


def _fit_crowd(ds, seed, C=20):
    return _crowd(seed, C).fit(ds.items, ds.users, ds.u, ds.a, ds.b, ds.y, n_users=ds.n_users, on_update=PSD)


def _fit_gppl(ds, seed):
    return GPPL(schedule=SviSchedule(seed=seed)).fit(ds.items, ds.a, ds.b, ds.y, on_update=PSD)


def _fit_per_user(ds, seed):
    return GPPLPerUser(schedule=SviSchedule(seed=seed)).fit(ds.items, ds.u, ds.a, ds.b, ds.y, n_users=ds.n_users,
                                                            on_update=PSD)


def _beta_oracle(factor):
    K = np.eye(factor.M) if factor.diagonal else factor.prior.K_mm
    S = factor.cov_matrix()
    return factor.beta0 + 0.5 * np.trace(np.linalg.solve(K, S + np.outer(factor.mean, factor.mean)))


def test_c1_likelihood(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_sym = 0.0
    for _ in range(1000):
        fa, fb = rng.normal(scale=3.0, size=2)
        B = rng.normal(size=(2, 2))
        C = B @ B.T
        p = pair_probability(fa, fb, C[0, 0], C[1, 1], C[0, 1])
        q = pair_probability(fb, fa, C[1, 1], C[0, 0], C[0, 1])
        worst_sym = max(worst_sym, abs(p + q - 1.0))
    worst_fd = 0.0
    h = 1e-6
    for _ in range(100):
        fa, fb = rng.normal(size=2)
        y = int(rng.integers(2))
        s = 2 * y - 1
        row = linearization_row(fa - fb, y, 0, 1, [0, 1])
        fd_a = (norm.cdf(s * (fa + h - fb)) - norm.cdf(s * (fa - h - fb))) / (2 * h)
        fd_b = (norm.cdf(s * (fa - fb - h)) - norm.cdf(s * (fa - fb + h))) / (2 * h)
        worst_fd = max(worst_fd, abs(row[0] - fd_a), abs(row[1] - fd_b))
    ok = worst_sym <= 1e-12 and worst_fd <= 1e-6
    assert report(capsys, "C1 likelihood", ok, f"max |p(a,b)+p(b,a)-1| = {worst_sym:.1e}, max FD error = {worst_fd:.1e}",
                  time.perf_counter() - t0, 1.0)


def test_c2_scale_updates(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    X = rng.random((20, 2))
    users = rng.random((5, 2))
    P = 150
    a = rng.integers(20, size=P)
    b = (a + rng.integers(1, 20, size=P)) % 20
    y = rng.integers(2, size=P)
    u = rng.integers(5, size=P)
    cfg = KernelConfig("matern32", [0.3, 0.3])
    sched = SviSchedule(batch_size=40, max_iterations=15)
    g = gppl_fit(X, a, b, y, cfg, select_inducing(X, 5, 0), alpha0=2.0, beta0=3.0, schedule=sched)
    c = crowd_fit(X, users, u, a, b, y, cfg, KernelConfig("sqexp", [0.4, 0.4]), select_inducing(X, 5, 0),
                  select_inducing(users, 4, 0), CrowdHyperparams(C=3, user_kernel_split=1), sched, n_users=5)
    factors = [("gppl f", g.factor)] + list(c.factors())
    alpha_ok = all(f.alpha == f.alpha0 + f.M / 2 for _, f in factors)
    beta_err = max(abs(f.beta - _beta_oracle(f)) / max(1.0, abs(f.beta)) for _, f in factors)
    sizes = sorted({f.M for _, f in factors})
    ok = alpha_ok and beta_err <= 1e-10 and max(sizes) <= 5
    assert report(capsys, "C2 scale updates", ok,
                  f"alpha exact on {len(factors)} factors: {alpha_ok}, max beta error {beta_err:.1e}, M in {sizes}",
                  time.perf_counter() - t0, 1.0)


def _small_state(rng, M):
    X = rng.random((M, 2))
    prior = InducingPrior(KernelConfig("matern32", [0.5, 0.5]), X)
    state = GPPLState(prior, GaussianFactor(prior, 2.0, 3.0), 1.5, 1.5)
    state.factor.mean = rng.normal(size=M) * 0.3
    return state, FeatureSpace(prior, X, is_training_set=True)


def test_c3_natural_gradient(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_fix, worst_oracle = 0.0, 0.0
    for case in range(20):
        M = 2 + case % 4
        state, space = _small_state(rng, M)
        n = 2 * M
        a = rng.integers(M, size=n)
        b = (a + rng.integers(1, M, size=n)) % M
        y = rng.integers(2, size=n)
        ws, A_batch, _, _ = build_workspace(space, state.factor, a, b, y, state.gamma, state.lam)
        K = state.prior.K_mm / state.factor.e_s
        H = ws.slopes[:, None] * (A_batch[ws.loc_a] - A_batch[ws.loc_b])
        gain = K @ H.T @ np.linalg.inv(H @ K @ H.T + np.diag(ws.Q_diag))
        m_or, S_or = gain @ ws.pseudo, K - gain @ H @ K
        gppl_update_batch(state, A_batch, ws, 1.0, 1.0)
        worst_oracle = max(worst_oracle, np.max(np.abs(state.factor.mean - m_or)),
                           np.max(np.abs(state.factor.cov - S_or)))
        m1, S1 = state.factor.mean.copy(), state.factor.cov.copy()
        gppl_update_batch(state, A_batch, ws, 1.0, 1.0)
        worst_fix = max(worst_fix, np.max(np.abs(state.factor.mean - m1)), np.max(np.abs(state.factor.cov - S1)))
    ok = worst_fix < 1e-8 and worst_oracle <= 1e-8
    assert report(capsys, "C3 natural gradient", ok,
                  f"fixed-point change {worst_fix:.1e}, oracle error {worst_oracle:.1e} (20 cases, M <= 5)",
                  time.perf_counter() - t0, 5.0)


def test_c4_reduction(capsys):
    t0 = time.perf_counter()
    ds = simulate_crowd(SimulationConfig(n_items=50, U=1, C_true=0, P=300, seed=4))
    cfg = KernelConfig("matern32", [0.3, 0.3])
    sched = SviSchedule(batch_size=100, max_iterations=60, convergence_tol=0.0, seed=4)
    g = gppl_fit(ds.items, ds.a, ds.b, ds.y, cfg, schedule=sched, on_update=PSD)
    c = crowd_fit(ds.items, None, ds.u, ds.a, ds.b, ds.y, cfg, hyper=CrowdHyperparams(C=0), schedule=sched,
                  n_users=1, on_update=PSD)
    PSD_CRITERIA.add("C4")
    errs = {
        "E[t]": np.max(np.abs(c.t.mean - g.factor.mean)),
        "S": np.max(np.abs(c.t.cov - g.factor.cov)),
        "alpha": abs(c.t.alpha - g.factor.alpha),
        "beta": abs(c.t.beta - g.factor.beta),
    }
    ok = all(v <= 1e-6 for v in errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert report(capsys, "C4 reduction", ok, detail, time.perf_counter() - t0, 30.0)


def test_c5_elbo(capsys):
    t0 = time.perf_counter()
    cfg = KernelConfig("matern32", [0.3, 0.3])
    ds = simulate_crowd(SimulationConfig(n_items=50, C_true=0, P=500, seed=5))
    log = FitLog()
    full = SviSchedule(batch_size=ds.P, forgetting_rate=0.0, max_iterations=20, elbo_every=1, convergence_tol=0.0,
                       inner_max=200, inner_tol=1e-10)
    gppl_fit(ds.items, ds.a, ds.b, ds.y, cfg, log=log, schedule=full)
    worst_drop = float(np.max(-np.diff(log.elbo_values())))
    ends_above = 0
    for seed in range(25):
        d = simulate_crowd(SimulationConfig(n_items=50, C_true=0, P=500, seed=100 + seed))
        lg = FitLog()
        gppl_fit(d.items, d.a, d.b, d.y, cfg, log=lg, schedule=SviSchedule(batch_size=50, max_iterations=50, seed=seed))
        v = lg.elbo_values()
        ends_above += int(v[-1] > v[0])
    ok = worst_drop <= 1e-6 and ends_above == 25
    assert report(capsys, "C5 ELBO", ok, f"largest full-batch decrease {worst_drop:.1e}, stochastic runs ending above "
                  f"start {ends_above}/25", time.perf_counter() - t0, 120.0)


def _consensus_taus(ds, seed):
    crowd = _fit_crowd(ds, seed)
    gppl = _fit_gppl(ds, seed)
    per_user = _fit_per_user(ds, seed)
    return (kendall_tau(crowd.predict(ds.items).t, ds.gold_t),
            kendall_tau(gppl.predict(ds.items, full_cov=False)[0], ds.gold_t),
            kendall_tau(per_user.consensus(ds.items), ds.gold_t))


@pytest.mark.slow
def test_c6_consensus(capsys):
    t0 = time.perf_counter()
    lines, ok = [], True
    for s_t in NOISE_LEVELS[:2]:
        taus = np.array([_consensus_taus(simulate_crowd(SimulationConfig(s_t=s_t, seed=600 + r)), r)
                         for r in range(REPEATS)])
        mean = taus.mean(axis=0)
        ok &= mean[0] > mean[1] and mean[0] > mean[2]
        lines.append(f"s_t={s_t}: crowd {mean[0]:.3f}, GPPL {mean[1]:.3f}, per-user {mean[2]:.3f}")
    PSD_CRITERIA.add("C6")
    assert report(capsys, "C6 consensus", ok, "; ".join(lines) + f" ({REPEATS} repeats)",
                  time.perf_counter() - t0, 900.0)


@pytest.mark.slow
def test_c7_personal(capsys):
    t0 = time.perf_counter()
    s_v = NOISE_LEVELS[0]
    crowd_taus, gppl_taus = [], []
    for r in range(REPEATS):
        ds = simulate_crowd(SimulationConfig(s_t=5.0, s_v=s_v, seed=700 + r))
        F = _fit_crowd(ds, r).predict(ds.items).F
        f = _fit_gppl(ds, r).predict(ds.items, full_cov=False)[0]
        crowd_taus.append(np.mean([kendall_tau(F[:, j], ds.gold_f[:, j]) for j in range(ds.n_users)]))
        gppl_taus.append(np.mean([kendall_tau(f, ds.gold_f[:, j]) for j in range(ds.n_users)]))
    PSD_CRITERIA.add("C7")
    c, g = float(np.mean(crowd_taus)), float(np.mean(gppl_taus))
    assert report(capsys, "C7 personal", c > g, f"s_v={s_v}: crowd {c:.3f}, GPPL {g:.3f} ({REPEATS} repeats)",
                  time.perf_counter() - t0, 900.0)


@pytest.mark.slow
def test_c8_components(capsys):
    t0 = time.perf_counter()
    scores, nulls = [], []
    for r in range(REPEATS):
        ds = simulate_crowd(SimulationConfig(C_true=5, s_t=1.0, s_v=1.0, s_w=1.0, P=2304, seed=800 + r))
        V = _fit_crowd(ds, r).predict(ds.items).v
        scores.append(match_components(ds.gold_v, V))
        nulls.append(match_components(ds.gold_v, np.random.default_rng(900 + r).standard_normal(V.shape)))
    PSD_CRITERIA.add("C8")
    gain = float(np.mean(scores) - np.mean(nulls))
    assert report(capsys, "C8 components", gain >= 0.3,
                  f"matched correlation {np.mean(scores):.3f} vs null {np.mean(nulls):.3f}, gain {gain:.3f} "
                  f"({REPEATS} repeats, 2304 pairs)", time.perf_counter() - t0, 900.0)


@pytest.mark.slow
def test_c9_shrinkage(capsys):
    t0 = time.perf_counter()
    counts = []
    for r in range(REPEATS):
        ds = simulate_crowd(SimulationConfig(C_true=3, seed=900 + r))
        state = _fit_crowd(ds, r).state_
        cv = np.array([component_variance(state, c) for c in range(state.C)])
        counts.append(int(np.sum(cv > 0.1 * cv.max())))
    PSD_CRITERIA.add("C9")
    assert report(capsys, "C9 shrinkage", max(counts) <= 8,
                  f"components above 10% of the largest variance per run: {counts}", time.perf_counter() - t0, 600.0)


def test_c10_scalability(capsys):
    t0 = time.perf_counter()
    lines, ok = [], True
    for model in ("gppl", "crowd"):
        p = summarise(run_sweep(model, "P", [500, 2000], N=200, M=50, batch_size=100, iterations=20))
        n = summarise(run_sweep(model, "N", [100, 400], P=1000, M=50, batch_size=100, iterations=20))
        rp = p[2000][0] / p[500][0]
        rn = n[400][0] / n[100][0]
        same = p[2000][1] == p[500][1]
        ok &= rp < 1.5 and rn < 1.5 and same
        lines.append(f"{model}: P x4 ratio {rp:.2f}, N x4 ratio {rn:.2f}, state bytes equal {same}")
    assert report(capsys, "C10 scalability", ok, "; ".join(lines), time.perf_counter() - t0, 600.0)


@pytest.mark.slow
def test_c11_psd(capsys):
    missing = {"C4", "C6", "C7", "C8", "C9"} - PSD_CRITERIA
    if missing:
        pytest.skip(f"needs criteria {sorted(missing)} in the same session")
    ok = not PSD.failures and PSD.checks > 0
    assert report(capsys, "C11 PSD", ok, f"{PSD.checks} Cholesky checks, {len(PSD.failures)} failures")


def test_c12_sushi(capsys):
    with capsys.disabled():
        print("\nC12 sushi SKIP: needs the user-downloaded sushi data")
    pytest.skip("needs the user-downloaded sushi data")
