import csv

import numpy as np
import pytest

from crowdpref.cli import main
from crowdpref.data import load_features
from crowdpref.gppl import gppl_predict
from crowdpref.serialization import load_model

FAST = "svi.max_iterations = 5\nsvi.batch_size = 200\nmodel.C = 3\ninducing.M_items = 30\ninducing.M_users = 10\n"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def fast_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "fast.txt"
    p.write_text(FAST)
    return str(p)


def test_simulate_shapes_and_determinism(sim_dir, tmp_path):
    assert len(_rows(sim_dir / "items.csv")) == 101
    assert len(_rows(sim_dir / "users.csv")) == 26
    assert len(_rows(sim_dir / "pairs.csv")) == 901
    assert not (sim_dir / "FAILED").exists()
    assert main(["simulate", "--out", str(tmp_path), "--seed", "3"]) == 0
    for name in ("items.csv", "users.csv", "pairs.csv", "gold_f.csv", "gold_t.csv"):
        assert (tmp_path / name).read_bytes() == (sim_dir / name).read_bytes()


def test_unknown_config_key_fails(tmp_path, capsys):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("svi.batchsize = 10\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "svi.batchsize" in capsys.readouterr().err


def test_missing_data_dir_leaves_marker(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", str(tmp_path / "nowhere"), "--out", str(out)]) == 1
    assert "not found" in capsys.readouterr().err
    assert (out / "FAILED").exists() and not (out / "model.json").exists()


def test_gppl_train_predict_evaluate(sim_dir, fast_cfg, tmp_path):
    run = tmp_path / "train"
    assert main(["train", str(sim_dir), "--model", "gppl", "--config", fast_cfg, "--out", str(run)]) == 0
    assert (run / "model.json").exists() and (run / "config.txt").exists()
    elbo = _rows(run / "elbo.csv")
    assert elbo[0] == ["iteration", "elbo"] and len(elbo) > 1

    pairs = tmp_path / "q.csv"
    pairs.write_text("user_id,item_a,item_b,label\n0,0,1,1\n0,1,0,0\n3,5,7,1\n")
    pred = tmp_path / "pred"
    assert main(["predict", str(run / "model.json"), "--items", str(sim_dir / "items.csv"), "--pairs", str(pairs),
                 "--out", str(pred)]) == 0
    util = _rows(pred / "utilities.csv")
    state = load_model(run / "model.json")
    ids, X = load_features(sim_dir / "items.csv")
    assert [r[0] for r in util[1:]] == ids
    got = np.array([float(r[1]) for r in util[1:]])
    assert np.max(np.abs(got - gppl_predict(state, X, full_cov=False)[0])) <= 1e-10
    probs = [float(r[3]) for r in _rows(pred / "pair_probs.csv")[1:]]
    assert abs(probs[0] + probs[1] - 1.0) <= 1e-12

    ev = tmp_path / "ev"
    assert main(["evaluate", "--pred", str(pred), "--gold", str(sim_dir), "--run-id", "r1", "--method", "gppl",
                 "--out", str(ev)]) == 0
    metrics = {r[2] for r in _rows(ev / "metrics.csv")[1:]}
    assert {"accuracy", "cee", "tau_consensus", "tau_personal"} <= metrics


def test_crowd_train_predict(sim_dir, fast_cfg, tmp_path, capsys):
    run = tmp_path / "train"
    assert main(["train", str(sim_dir), "--model", "crowd", "--config", fast_cfg, "--out", str(run)]) == 0
    pred = tmp_path / "pred"
    args = ["predict", str(run / "model.json"), "--items", str(sim_dir / "items.csv"), "--out", str(pred)]
    assert main(args) == 1
    assert "--users" in capsys.readouterr().err
    assert main(args + ["--users", str(sim_dir / "users.csv")]) == 0
    header = _rows(pred / "utilities.csv")[0]
    assert header[0] == "item_id" and header[-1] == "consensus" and len(header) == 27


def test_per_user_train_predict(sim_dir, fast_cfg, tmp_path):
    run = tmp_path / "train"
    assert main(["train", str(sim_dir), "--model", "gppl-per-user", "--config", fast_cfg, "--out", str(run)]) == 0
    assert _rows(run / "elbo.csv")[0] == ["user_id", "iteration", "elbo"]
    pred = tmp_path / "pred"
    assert main(["predict", str(run / "model.json"), "--items", str(sim_dir / "items.csv"), "--out", str(pred)]) == 0
    assert len(_rows(pred / "utilities.csv")[0]) == 27


def test_predict_unknown_item(sim_dir, fast_cfg, tmp_path, capsys):
    run = tmp_path / "train"
    main(["train", str(sim_dir), "--model", "gppl", "--config", fast_cfg, "--out", str(run)])
    pairs = tmp_path / "q.csv"
    pairs.write_text("user_id,item_a,item_b\n0,0,zzz\n")
    out = tmp_path / "pred"
    assert main(["predict", str(run / "model.json"), "--items", str(sim_dir / "items.csv"), "--pairs", str(pairs),
                 "--out", str(out)]) == 1
    assert "zzz" in capsys.readouterr().err
    assert (out / "FAILED").exists()


def test_bench_writes_timing(tmp_path):
    cfg = tmp_path / "b.txt"
    cfg.write_text("bench.values = 20,40\nbench.N = 30\nbench.M = 10\nbench.batch_size = 10\nbench.iterations = 4\n")
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "1"]) == 0
    rows = _rows(tmp_path / "b" / "timing.csv")
    assert len(rows) == 1 + 2 * 4
    assert {r[1] for r in rows[1:]} == {"20", "40"}
