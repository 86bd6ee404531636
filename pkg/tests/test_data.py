import os

import numpy as np
import pytest
from scipy.special import ndtr

from crowdpref.data import (
    PreferenceDataset,
    SimulationConfig,
    convert_sushi,
    grid_points,
    load_csv,
    load_features,
    save_csv,
    simulate_crowd,
    split_dataset,
)
from crowdpref.exceptions import DataLoadError, InvalidConfigError, InvalidInputError


def test_default_simulation_shapes():
    ds = simulate_crowd(SimulationConfig())
    assert (ds.n_items, ds.n_users, ds.P) == (100, 25, 900)
    assert ds.gold_f.shape == (100, 25) and ds.gold_t.shape == (100,)
    assert np.all(ds.a != ds.b)
    assert set(np.unique(ds.y)) <= {0, 1}


def test_full_grid():
    ds = simulate_crowd(SimulationConfig(n_items=None, P=10))
    assert ds.n_items == 400
    assert np.array_equal(ds.items, grid_points(20))
    assert ds.items.min() == 0.0 and ds.items.max() == 1.0


def test_simulation_deterministic():
    a = simulate_crowd(SimulationConfig(seed=5))
    b = simulate_crowd(SimulationConfig(seed=5))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.gold_f, b.gold_f)


def test_no_components_gives_shared_utilities():
    ds = simulate_crowd(SimulationConfig(C_true=0))
    assert np.all(ds.gold_f == ds.gold_f[:, :1])


def test_large_s_t_flattens_consensus():
    ds = simulate_crowd(SimulationConfig(s_t=1e6))
    assert np.std(ds.gold_t) < 0.01
    assert np.std(ds.gold_f) > 0.1


def test_label_frequencies_match_probit():
    # few items and users so each (user, a, b) triple recurs many times
    ds = simulate_crowd(SimulationConfig(P=20_000, U=3, n_items=4, grid_side=2, seed=1))
    F = ds.gold_f
    key = (ds.u == 0) & (ds.a == 0) & (ds.b == 1)
    n = key.sum()
    p = ndtr(F[0, 0] - F[1, 0])
    se = np.sqrt(p * (1 - p) / n)
    assert n > 500
    assert abs(ds.y[key].mean() - p) < 3 * se


def test_bad_simulation_config():
    with pytest.raises(InvalidConfigError):
        SimulationConfig(U=0)
    with pytest.raises(InvalidConfigError):
        SimulationConfig(n_items=500)
    with pytest.raises(InvalidConfigError):
        SimulationConfig(s_v=-1.0)


def test_split_fraction():
    ds = simulate_crowd(SimulationConfig())
    tr, te = split_dataset(ds, train_fraction=0.5, seed=3)
    assert (tr.P, te.P) == (450, 450)
    tr2, te2 = split_dataset(ds, train_fraction=0.5, seed=3)
    assert np.array_equal(tr.a, tr2.a) and np.array_equal(te.b, te2.b)


def test_split_is_disjoint():
    ds = simulate_crowd(SimulationConfig(P=60))
    ds.y[:] = np.arange(60)  # tag every pair so rows can be traced
    tr, te = split_dataset(ds, train_fraction=0.3, seed=0)
    assert tr.P + te.P == 60
    assert set(tr.y.tolist()).isdisjoint(te.y.tolist())
    assert sorted(tr.y.tolist() + te.y.tolist()) == list(range(60))


def test_split_per_user():
    u = np.repeat([0, 1], 30)
    a = np.arange(60) % 9
    ds = PreferenceDataset(np.random.default_rng(0).random((10, 2)), np.zeros((2, 0)), u, a, a + 1, np.ones(60))
    tr, te = split_dataset(ds, per_user_counts=(5, 25), seed=0)
    assert np.bincount(tr.u).tolist() == [5, 5]
    assert np.bincount(te.u).tolist() == [25, 25]
    with pytest.raises(InvalidInputError, match="0, 1"):
        split_dataset(ds, per_user_counts=(10, 25))


def test_csv_roundtrip(tmp_path):
    ds = simulate_crowd(SimulationConfig(P=50))
    save_csv(ds, tmp_path)
    back = load_csv(tmp_path / "items.csv", tmp_path / "users.csv", tmp_path / "pairs.csv")
    # ids are sorted as strings, so compare through the id maps
    order = [int(i) for i in back.item_ids]
    assert np.array_equal(back.items, ds.items[order])
    uorder = [int(j) for j in back.user_ids]
    orig = set(zip(ds.u.tolist(), ds.a.tolist(), ds.b.tolist(), ds.y.tolist()))
    loaded = {(uorder[j], order[a], order[b], y) for j, a, b, y in zip(back.u, back.a, back.b, back.y)}
    assert loaded == orig


def test_save_is_byte_identical(tmp_path):
    for d in ("x", "y"):
        save_csv(simulate_crowd(SimulationConfig(seed=2)), tmp_path / d)
    for name in ("items.csv", "users.csv", "pairs.csv", "gold_f.csv", "gold_t.csv"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def _write(path, text):
    path.write_text(text)
    return path


def test_one_hot_encoding(tmp_path):
    p = _write(tmp_path / "items.csv", "id,colour:categorical,w:numeric,h:numeric\nb,red,1,2\na,blue,3,4\nc,green,5,6\n")
    ids, X = load_features(p)
    assert ids == ["a", "b", "c"]
    assert X.shape == (3, 5)
    assert np.all(X[:, :3].sum(axis=1) == 1)
    assert X[:, 3:].tolist() == [[3, 4], [1, 2], [5, 6]]


def test_unknown_item_id_reports_line(tmp_path):
    items = _write(tmp_path / "items.csv", "id,x:numeric\na,1\nb,2\n")
    pairs = _write(tmp_path / "pairs.csv", "user_id,item_a,item_b,label\nu,a,b,1\nu,a,zz,0\n")
    with pytest.raises(DataLoadError, match=r"pairs.csv:3: unknown item id 'zz'"):
        load_csv(items, None, pairs)


def test_bad_label_and_missing_file(tmp_path):
    items = _write(tmp_path / "items.csv", "id,x:numeric\na,1\nb,2\n")
    pairs = _write(tmp_path / "pairs.csv", "user_id,item_a,item_b,label\nu,a,b,yes\n")
    with pytest.raises(DataLoadError, match="label"):
        load_csv(items, None, pairs)
    with pytest.raises(DataLoadError, match="missing"):
        load_csv(tmp_path / "nope.csv", None, pairs)


def test_users_without_features_file(tmp_path):
    items = _write(tmp_path / "items.csv", "id,x:numeric\na,1\nb,2\n")
    pairs = _write(tmp_path / "pairs.csv", "user_id,item_a,item_b,label\nv,a,b,1\nu,b,a,0\n")
    ds = load_csv(items, tmp_path / "users.csv", pairs)
    assert ds.user_ids == ["u", "v"] and not ds.has_user_features
    assert ds.u.tolist() == [1, 0]


def test_convert_sushi(tmp_path):
    idata = _write(tmp_path / "idata", "0\tebi\t0\t1\t2\t0.5\t2.1\t1.8\t0.9\n1\tanago\t1\t1\t3\t0.2\t1.0\t2.0\t0.4\n"
                   "2\tmaguro\t0\t2\t1\t0.8\t2.5\t1.5\t1.0\n")
    udata = _write(tmp_path / "udata", "u1\t0\t1\t300\t1\t2\t0\t1\t2\t0\t1\nu2\t1\t2\t200\t3\t4\t1\t3\t4\t1\t0\n")
    order = _write(tmp_path / "order", "3 1\n0 3 2 0 1\n0 2 1 0\n")
    paths = convert_sushi(idata, udata, order, tmp_path / "out")
    ds = load_csv(paths["items"], paths["users"], paths["pairs"])
    assert ds.n_items == 3 and ds.n_users == 2
    assert ds.P == 3 + 1
    assert np.all(ds.y == 1)
    # first user ranks item 2 first
    first = ds.u == ds.user_ids.index("u1")
    assert (ds.a[first][0], ds.b[first][0]) == (2, 0)
