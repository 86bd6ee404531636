"""Baselines: one independent GPPL per user, with the mean as consensus."""
from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError
from .gppl import FitLog, GPPLState, gppl_fit, gppl_predict, gppl_predict_pairs, resolve_kernel
from .inducing import select_inducing
from .svi import SviSchedule


class GPPLPerUser:
    """Independent GPPL models sharing one kernel and inducing set."""

    def __init__(self, kernel="matern32", M=500, alpha0=1.0, beta0=100.0, schedule: SviSchedule | None = None,
                 derivative="probit", inducing_seed=0):
        self.kernel = kernel
        self.M = M
        self.alpha0 = alpha0
        self.beta0 = beta0
        self.schedule = schedule or SviSchedule()
        self.derivative = derivative
        self.inducing_seed = inducing_seed
        self.states_: dict[int, GPPLState] = {}
        self.logs_: dict[int, FitLog] = {}
        self.n_users = 0

    def fit(self, items, u, a, b, y, n_users=None, on_update=None) -> "GPPLPerUser":
        items = np.asarray(items, dtype=float)
        u = np.asarray(u, dtype=np.int64)
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        y = np.asarray(y)
        cfg = resolve_kernel(self.kernel, items)
        inducing = None if cfg.is_identity else select_inducing(items, self.M, self.inducing_seed)
        self.n_users = int(n_users if n_users is not None else u.max() + 1)
        self.states_, self.logs_ = {}, {}
        for j in range(self.n_users):
            mask = u == j
            if not mask.any():
                continue
            log = FitLog()
            self.states_[j] = gppl_fit(items, a[mask], b[mask], y[mask], cfg, inducing, self.alpha0, self.beta0,
                                       self.schedule, self.derivative, log, on_update)
            self.logs_[j] = log
        return self

    def predict_f(self, X_star) -> np.ndarray:
        """Utilities (items x users); users without training pairs keep the zero prior mean."""
        if not self.states_:
            raise InvalidInputError("model is not fitted")
        cols = []
        for j in range(self.n_users):
            st = self.states_.get(j)
            if st is None:
                cols.append(np.zeros(len(X_star)))
            else:
                cols.append(gppl_predict(st, X_star, full_cov=False)[0])
        return np.column_stack(cols)

    def consensus(self, X_star) -> np.ndarray:
        return self.predict_f(X_star).mean(axis=1)

    def predict_pairs(self, X_star, a, b, pair_users) -> np.ndarray:
        pair_users = np.asarray(pair_users, dtype=np.int64)
        out = np.full(pair_users.size, 0.5)
        for j in np.unique(pair_users):
            st = self.states_.get(int(j))
            mask = pair_users == j
            if st is not None:
                out[mask] = gppl_predict_pairs(st, X_star, np.asarray(a)[mask], np.asarray(b)[mask])
        return out
