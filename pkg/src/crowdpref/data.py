"""Preference datasets: CSV ingestion, splitting and the synthetic crowd generator."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .exceptions import DataLoadError, InvalidConfigError, InvalidInputError
from .kernels import KernelConfig, covariance_matrix, median_heuristic

SIM_JITTER = 1e-6


@dataclass
class PreferenceDataset:
    """Items, users and labelled pairs ``(u, a, b, y)``; ``y = 1`` means ``a`` was preferred.

    ``gold_f`` (items x users) and ``gold_t`` are only present for simulated
    data; ``gold_v``/``gold_w`` hold the true components when known.
    """

    items: np.ndarray
    users: np.ndarray
    u: np.ndarray
    a: np.ndarray
    b: np.ndarray
    y: np.ndarray
    gold_f: np.ndarray | None = None
    gold_t: np.ndarray | None = None
    gold_v: np.ndarray | None = None
    gold_w: np.ndarray | None = None
    item_ids: list = field(default_factory=list)
    user_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=float)
        self.users = np.asarray(self.users, dtype=float)
        if self.users.ndim == 1:
            self.users = self.users.reshape(-1, 0) if self.users.size == 0 else self.users[:, None]
        self.u = np.asarray(self.u, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.b = np.asarray(self.b, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if not (self.u.shape == self.a.shape == self.b.shape == self.y.shape):
            raise InvalidInputError("pair arrays must have equal length")
        if self.P and (min(self.a.min(), self.b.min()) < 0 or max(self.a.max(), self.b.max()) >= self.n_items):
            raise InvalidInputError("item index out of range")
        if self.P and (self.u.min() < 0 or self.u.max() >= self.n_users):
            raise InvalidInputError("user index out of range")
        if not self.item_ids:
            self.item_ids = [str(i) for i in range(self.n_items)]
        if not self.user_ids:
            self.user_ids = [str(j) for j in range(self.n_users)]

    @property
    def n_items(self) -> int:
        return self.items.shape[0]

    @property
    def n_users(self) -> int:
        return self.users.shape[0]

    @property
    def P(self) -> int:
        return self.a.size

    @property
    def has_user_features(self) -> bool:
        return self.users.ndim == 2 and self.users.shape[1] > 0

    def subset(self, idx) -> "PreferenceDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return PreferenceDataset(
            self.items, self.users, self.u[idx], self.a[idx], self.b[idx], self.y[idx],
            self.gold_f, self.gold_t, self.gold_v, self.gold_w, list(self.item_ids), list(self.user_ids),
        )


# --------------------------------------------------------------------------- simulation


@dataclass
class SimulationConfig:
    """Generator settings. ``s_v`` may be a scalar, one value per component, or
    ``None`` to draw each uniformly from ``s_v_range``. ``n_items`` subsamples
    the grid (``None`` keeps all ``grid_side**2`` points)."""

    grid_side: int = 20
    n_items: int | None = 100
    U: int = 25
    C_true: int = 5
    s_t: float = 1.0
    s_v: float | list | None = None
    s_v_range: tuple = (0.1, 10.0)
    s_w: float = 1.0
    P: int = 900
    user_dims: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("grid_side", "U", "P"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive")
        if self.C_true < 0:
            raise InvalidConfigError("C_true must be non-negative")
        if self.n_items is not None and not 2 <= self.n_items <= self.grid_side ** 2:
            raise InvalidConfigError("n_items must lie between 2 and grid_side**2")
        if self.n_items is None and self.grid_side < 2:
            raise InvalidConfigError("grid needs at least 2 points")
        if not (self.s_t > 0 and self.s_w > 0):
            raise InvalidConfigError("inverse scales must be positive")
        lo, hi = self.s_v_range
        if not 0 < lo <= hi:
            raise InvalidConfigError("s_v_range must be positive and ordered")
        if self.s_v is not None and np.any(np.asarray(self.s_v, dtype=float) <= 0):
            raise InvalidConfigError("s_v must be positive")
        if self.user_dims < 0:
            raise InvalidConfigError("user_dims must be non-negative")

    def component_scales(self, rng) -> np.ndarray:
        if self.s_v is None:
            return rng.uniform(*self.s_v_range, size=self.C_true)
        s = np.asarray(self.s_v, dtype=float)
        if s.ndim == 0:
            return np.full(self.C_true, float(s))
        if s.size != self.C_true:
            raise InvalidConfigError("s_v needs one value per component")
        return s.copy()


def grid_points(side: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, side)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _gp_draws(X, n, scale, rng):
    """``n`` columns drawn from ``N(0, (K + jitter I) / scale)`` with a Matern 3/2 kernel."""
    cfg = KernelConfig("matern32", median_heuristic(X))
    K = covariance_matrix(X, None, cfg) + SIM_JITTER * np.eye(X.shape[0])
    L = np.linalg.cholesky(K)
    return L @ rng.standard_normal((X.shape[0], n)) / np.sqrt(np.asarray(scale, dtype=float))


def simulate_crowd(cfg: SimulationConfig) -> PreferenceDataset:
    """Draw consensus, components and labels from the crowd generative model."""
    rng = np.random.default_rng(cfg.seed)
    X = grid_points(cfg.grid_side)
    if cfg.n_items is not None and cfg.n_items < X.shape[0]:
        X = X[np.sort(rng.choice(X.shape[0], cfg.n_items, replace=False))]
    N = X.shape[0]
    users = rng.random((cfg.U, cfg.user_dims))
    s_v = cfg.component_scales(rng)
    t = _gp_draws(X, 1, cfg.s_t, rng)[:, 0]
    V = _gp_draws(X, cfg.C_true, s_v, rng) if cfg.C_true else np.zeros((N, 0))
    if cfg.C_true and cfg.user_dims:
        W = _gp_draws(users, cfg.C_true, cfg.s_w, rng)
    else:
        W = rng.standard_normal((cfg.U, cfg.C_true)) / np.sqrt(cfg.s_w)
    F = V @ W.T + t[:, None]
    u = rng.integers(cfg.U, size=cfg.P)
    a = rng.integers(N, size=cfg.P)
    b = (a + rng.integers(1, N, size=cfg.P)) % N
    p = ndtr(F[a, u] - F[b, u])
    y = (rng.random(cfg.P) < p).astype(np.int64)
    return PreferenceDataset(X, users, u, a, b, y, gold_f=F, gold_t=t, gold_v=V, gold_w=W)


# --------------------------------------------------------------------------- splitting


def split_dataset(ds: PreferenceDataset, train_fraction: float | None = None, per_user_counts=None, seed: int = 0):
    """Disjoint train/test pair sets.

    Either a global ``train_fraction`` or ``per_user_counts = (n_train, n_test)``
    drawn separately for every user.
    """
    rng = np.random.default_rng(seed)
    if (train_fraction is None) == (per_user_counts is None):
        raise InvalidInputError("give exactly one of train_fraction or per_user_counts")
    if train_fraction is not None:
        if not 0.0 <= train_fraction <= 1.0:
            raise InvalidInputError("train_fraction must lie in [0, 1]")
        perm = rng.permutation(ds.P)
        n_train = int(round(train_fraction * ds.P))
        return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))
    n_train, n_test = per_user_counts
    counts = np.bincount(ds.u, minlength=ds.n_users)
    bad = [ds.user_ids[j] for j in np.flatnonzero(counts) if counts[j] < n_train + n_test]
    if bad:
        raise InvalidInputError(f"users with fewer than {n_train + n_test} pairs: {', '.join(bad)}")
    train, test = [], []
    for j in np.flatnonzero(counts):
        idx = rng.permutation(np.flatnonzero(ds.u == j))
        train.append(idx[:n_train])
        test.append(idx[n_train:n_train + n_test])
    return ds.subset(np.sort(np.concatenate(train))), ds.subset(np.sort(np.concatenate(test)))


# --------------------------------------------------------------------------- CSV


def _read_rows(path):
    if not os.path.exists(path):
        raise DataLoadError(f"missing file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataLoadError(f"{path}: empty file")
    return rows[0], rows[1:]


def _parse_header(path, header):
    """Header cells are ``id`` then ``name:numeric`` or ``name:categorical``."""
    if not header or header[0].strip() != "id":
        raise DataLoadError(f"{path}: first column must be 'id'")
    cols = []
    for cell in header[1:]:
        name, _, kind = cell.partition(":")
        kind = kind.strip() or "numeric"
        if kind not in ("numeric", "categorical"):
            raise DataLoadError(f"{path}: column {name!r} has unknown kind {kind!r}")
        cols.append((name.strip(), kind))
    return cols


def load_features(path):
    """Entity ids in sorted order and their encoded feature matrix."""
    header, rows = _read_rows(path)
    cols = _parse_header(path, header)
    by_id = {}
    for line, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(cols) + 1:
            raise DataLoadError(f"{path}:{line}: expected {len(cols) + 1} fields, got {len(row)}")
        if row[0] in by_id:
            raise DataLoadError(f"{path}:{line}: duplicate id {row[0]!r}")
        by_id[row[0]] = (line, row[1:])
    ids = sorted(by_id)
    blocks = []
    for k, (name, kind) in enumerate(cols):
        raw = [by_id[i][1][k] for i in ids]
        if kind == "numeric":
            try:
                blocks.append(np.array([float(v) for v in raw])[:, None])
            except ValueError:
                bad = next(i for i in ids if not _is_float(by_id[i][1][k]))
                raise DataLoadError(f"{path}:{by_id[bad][0]}: column {name!r} is not numeric") from None
        else:
            levels = sorted(set(raw))
            onehot = np.zeros((len(ids), len(levels)))
            onehot[np.arange(len(ids)), [levels.index(v) for v in raw]] = 1.0
            blocks.append(onehot)
    X = np.hstack(blocks) if blocks else np.zeros((len(ids), 0))
    return ids, X


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_csv(items_path, users_path, pairs_path) -> PreferenceDataset:
    """Load items, optional users and pairs; ids map to indices in sorted order."""
    item_ids, items = load_features(items_path)
    if users_path is not None and os.path.exists(users_path):
        user_ids, users = load_features(users_path)
    else:
        user_ids, users = None, None
    header, rows = _read_rows(pairs_path)
    if [h.strip() for h in header] != ["user_id", "item_a", "item_b", "label"]:
        raise DataLoadError(f"{pairs_path}: header must be user_id,item_a,item_b,label")
    item_index = {k: i for i, k in enumerate(item_ids)}
    if user_ids is None:
        user_ids = sorted({r[0] for r in rows if r})
        users = np.zeros((len(user_ids), 0))
    user_index = {k: j for j, k in enumerate(user_ids)}
    u, a, b, y = [], [], [], []
    for line, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise DataLoadError(f"{pairs_path}:{line}: expected 4 fields")
        uid, ia, ib, lab = row
        for ident, table, what in ((uid, user_index, "user"), (ia, item_index, "item"), (ib, item_index, "item")):
            if ident not in table:
                raise DataLoadError(f"{pairs_path}:{line}: unknown {what} id {ident!r}")
        if lab.strip() not in ("0", "1"):
            raise DataLoadError(f"{pairs_path}:{line}: label must be 0 or 1, got {lab!r}")
        if ia == ib:
            raise DataLoadError(f"{pairs_path}:{line}: item compared with itself")
        u.append(user_index[uid])
        a.append(item_index[ia])
        b.append(item_index[ib])
        y.append(int(lab))
    return PreferenceDataset(items, users, u, a, b, y, item_ids=list(item_ids), user_ids=list(user_ids))


def _fmt(x) -> str:
    return repr(float(x))


def _write_matrix(path, ids, X, prefix="x"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"{prefix}{k}:numeric" for k in range(X.shape[1])])
        for i, row in zip(ids, X):
            w.writerow([i] + [_fmt(v) for v in row])


def save_csv(ds: PreferenceDataset, out_dir) -> dict:
    """Write items.csv, users.csv, pairs.csv and, for simulated data, gold_f.csv and gold_t.csv."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{k}.csv") for k in ("items", "users", "pairs")}
    _write_matrix(paths["items"], ds.item_ids, ds.items)
    _write_matrix(paths["users"], ds.user_ids, ds.users, prefix="u")
    with open(paths["pairs"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_a", "item_b", "label"])
        for j, ia, ib, lab in zip(ds.u, ds.a, ds.b, ds.y):
            w.writerow([ds.user_ids[j], ds.item_ids[ia], ds.item_ids[ib], int(lab)])
    if ds.gold_f is not None:
        paths["gold_f"] = os.path.join(out_dir, "gold_f.csv")
        with open(paths["gold_f"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["item_id"] + list(ds.user_ids))
            for i, row in zip(ds.item_ids, ds.gold_f):
                w.writerow([i] + [_fmt(v) for v in row])
    if ds.gold_t is not None:
        paths["gold_t"] = os.path.join(out_dir, "gold_t.csv")
        with open(paths["gold_t"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["item_id", "t"])
            for i, v in zip(ds.item_ids, ds.gold_t):
                w.writerow([i, _fmt(v)])
    return paths


def load_gold(path):
    """Read gold_f.csv (items x users) or gold_t.csv (items) as ids and a float array."""
    header, rows = _read_rows(path)
    rows = [r for r in rows if r]
    ids = [r[0] for r in rows]
    vals = np.array([[float(v) for v in r[1:]] for r in rows])
    return header, ids, vals


# --------------------------------------------------------------------------- sushi adapter

SUSHI_ITEM_COLUMNS = [
    ("style", "categorical"), ("major_group", "categorical"), ("minor_group", "categorical"),
    ("oiliness", "numeric"), ("eating_frequency", "numeric"), ("price", "numeric"), ("selling_frequency", "numeric"),
]
SUSHI_USER_COLUMNS = [
    ("gender", "categorical"), ("age", "categorical"), ("time", "numeric"),
    ("pref_until15", "categorical"), ("region_until15", "categorical"), ("east_west_until15", "categorical"),
    ("pref_now", "categorical"), ("region_now", "categorical"), ("east_west_now", "categorical"),
    ("moved", "categorical"),
]


def convert_sushi(idata_path, udata_path, order_path, out_dir, max_users: int | None = None) -> dict:
    """Convert the published sushi3 files to the CSV layout used by ``load_csv``.

    ``idata`` rows: id, name, then the item columns above (tab separated).
    ``udata`` rows: id then the user columns. ``order`` files have a header
    line, then per user ``0 <k> item_1 ... item_k`` from most to least
    preferred; every ordered pair becomes one label with ``a`` the preferred
    item. Only user-supplied local files are read.
    """
    os.makedirs(out_dir, exist_ok=True)

    def table(path, skip):
        if not os.path.exists(path):
            raise DataLoadError(f"missing file: {path}")
        with open(path) as fh:
            return [ln.split("\t") if "\t" in ln else ln.split() for ln in fh.read().splitlines() if ln.strip()]

    items = table(idata_path, 0)
    with open(os.path.join(out_dir, "items.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"{n}:{k}" for n, k in SUSHI_ITEM_COLUMNS])
        for r in items:
            w.writerow([r[0]] + r[2:2 + len(SUSHI_ITEM_COLUMNS)])
    users = table(udata_path, 0)
    with open(os.path.join(out_dir, "users.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"{n}:{k}" for n, k in SUSHI_USER_COLUMNS])
        for r in users[:max_users]:
            w.writerow([r[0]] + r[1:1 + len(SUSHI_USER_COLUMNS)])
    orders = table(order_path, 0)[1:]
    kept = {r[0] for r in users[:max_users]}
    with open(os.path.join(out_dir, "pairs.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_a", "item_b", "label"])
        for uid, r in zip([u[0] for u in users], orders):
            if uid not in kept:
                continue
            ranking = r[2:2 + int(r[1])]
            for i in range(len(ranking)):
                for j in range(i + 1, len(ranking)):
                    w.writerow([uid, ranking[i], ranking[j], 1])
    return {k: os.path.join(out_dir, f"{k}.csv") for k in ("items", "users", "pairs")}
