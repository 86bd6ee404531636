"""Scalability sweeps: per-iteration wall time and persistent state size."""
from __future__ import annotations

import csv

import numpy as np
from scipy.special import ndtr

from .crowd import CrowdHyperparams, crowd_fit
from .exceptions import InvalidConfigError
from .gppl import FitLog, gppl_fit, resolve_kernel
from .inducing import select_inducing
from .svi import SviSchedule


def bench_data(N, P, n_users=20, seed=0):
    """Items on the unit square with a smooth utility and probit labels."""
    rng = np.random.default_rng(seed)
    X = rng.random((N, 2))
    users = rng.random((n_users, 2))
    f = np.sin(3.0 * X[:, 0]) + np.cos(3.0 * X[:, 1])
    bias = np.outer(X[:, 0] - 0.5, users[:, 0] - 0.5) * 4.0
    u = rng.integers(n_users, size=P)
    a = rng.integers(N, size=P)
    b = (a + rng.integers(1, N, size=P)) % N
    F = f[:, None] + bias
    y = (rng.random(P) < ndtr(F[a, u] - F[b, u])).astype(int)
    return X, users, u, a, b, y


def time_fit(model, N, P, M, batch_size, iterations, seed=0, C=5, inner=3):
    """Fit for a fixed number of iterations; returns ``(FitLog, state_bytes)``.

    Kernel and inducing-point setup happen before the timed loop, and the
    bound is only evaluated after the last iteration (outside the timings).
    Every iteration runs exactly ``inner`` linearisation sweeps so timings
    compare equal amounts of work.
    """
    X, users, u, a, b, y = bench_data(N, P, seed=seed)
    schedule = SviSchedule(batch_size=batch_size, max_iterations=iterations, convergence_tol=0.0,
                           inner_max=inner, inner_tol=0.0, elbo_every=iterations + 1, seed=seed)
    cfg = resolve_kernel("matern32", X)
    inducing = select_inducing(X, M, seed)
    log = FitLog()
    if model == "gppl":
        state = gppl_fit(X, a, b, y, cfg, inducing, schedule=schedule, log=log)
    elif model == "crowd":
        ucfg = resolve_kernel("matern32", users)
        state = crowd_fit(X, users, u, a, b, y, cfg, ucfg, inducing, select_inducing(users, M, seed),
                          CrowdHyperparams(C=C), schedule, n_users=users.shape[0], log=log)
    else:
        raise InvalidConfigError(f"unknown benchmark model {model!r}")
    return log, state.nbytes()


def run_sweep(model="gppl", sweep="P", values=(250, 500, 1000, 2000), N=200, P=1000, M=50, batch_size=100,
              iterations=20, seed=0):
    """One row per timed iteration: ``(sweep, value, iteration, wall_ms, peak_state_bytes)``."""
    rows = []
    for value in values:
        params = {"N": N, "P": P, "M": M, "batch_size": batch_size}
        if sweep not in params:
            raise InvalidConfigError(f"cannot sweep over {sweep!r}")
        params[sweep] = int(value)
        log, nbytes = time_fit(model, params["N"], params["P"], params["M"], params["batch_size"], iterations, seed)
        for i, sec in enumerate(log.iteration_seconds, start=1):
            rows.append((sweep, int(value), i, 1000.0 * sec, nbytes))
    return rows


def summarise(rows, skip=2):
    """Median per-iteration milliseconds and state bytes per swept value (first ``skip`` iterations dropped)."""
    out = {}
    for value in sorted({r[1] for r in rows}):
        ms = [r[3] for r in rows if r[1] == value and r[2] > skip]
        out[value] = (float(np.median(ms)), max(r[4] for r in rows if r[1] == value))
    return out


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "value", "iteration", "wall_ms", "peak_state_bytes"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.6f}", r[4]])
