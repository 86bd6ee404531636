"""Command-line entry point: simulate, train, predict, evaluate, bench."""
from __future__ import annotations

import argparse
import csv
import os
import sys
from contextlib import contextmanager

import numpy as np

from . import bench as bench_mod
from .baselines import GPPLPerUser
from .config import format_config, hyper_from, int_list, load_config, schedule_from, simulation_from
from .crowd import CrowdState, crowd_fit, crowd_predict, crowd_predict_pairs
from .data import load_csv, load_features, load_gold, save_csv, simulate_crowd
from .evaluation import accuracy, cross_entropy, kendall_tau, write_metrics
from .exceptions import CrowdPrefError, DataLoadError, InvalidInputError
from .gppl import FitLog, GPPLState, gppl_fit, gppl_predict, gppl_predict_pairs, resolve_kernel
from .inducing import select_inducing
from .serialization import load_model, save_model

FAILED = "FAILED"


@contextmanager
def guarded(out_dir):
    """Leave a failure marker in ``out_dir`` unless the block completes."""
    os.makedirs(out_dir, exist_ok=True)
    marker = os.path.join(out_dir, FAILED)
    with open(marker, "w") as fh:
        fh.write("incomplete run\n")
    try:
        yield
    except BaseException as exc:
        with open(marker, "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        raise
    os.remove(marker)


def _set_threads(n):
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:  # pragma: no cover
        pass
    return threadpool_limits(limits=n)


def _resolved(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _echo_config(cfg, out_dir):
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(format_config(cfg))


# --------------------------------------------------------------------------- simulate


def cmd_simulate(args):
    cfg = _resolved(args)
    with guarded(args.out):
        ds = simulate_crowd(simulation_from(cfg))
        save_csv(ds, args.out)
        _echo_config(cfg, args.out)
    print(f"wrote {ds.n_items} items, {ds.n_users} users, {ds.P} pairs to {args.out}")


# --------------------------------------------------------------------------- train


def _load_dir(data_dir):
    if not os.path.isdir(data_dir):
        raise DataLoadError(f"data directory not found: {data_dir}")
    return load_csv(os.path.join(data_dir, "items.csv"), os.path.join(data_dir, "users.csv"),
                    os.path.join(data_dir, "pairs.csv"))


def train_model(cfg, ds):
    """Fit the configured model; returns ``(model, FitLog or per-user logs)``."""
    schedule = schedule_from(cfg)
    kind = cfg["model"]
    items_cfg = resolve_kernel(cfg["kernel.family"], ds.items)
    item_ind = None if items_cfg.is_identity else select_inducing(ds.items, cfg["inducing.M_items"], cfg["seed"])
    alpha0, beta0 = cfg["hyper.alpha0_t"], cfg["hyper.beta0_t"]
    if kind == "gppl":
        log = FitLog()
        state = gppl_fit(ds.items, ds.a, ds.b, ds.y, items_cfg, item_ind, alpha0, beta0, schedule,
                         cfg["model.derivative"], log)
        return state, log
    if kind == "gppl-per-user":
        m = GPPLPerUser(items_cfg, cfg["inducing.M_items"], alpha0, beta0, schedule, cfg["model.derivative"],
                        cfg["seed"]).fit(ds.items, ds.u, ds.a, ds.b, ds.y, n_users=ds.n_users)
        return m, m.logs_
    user_cfg, user_ind = None, None
    if ds.has_user_features and cfg["kernel.user_family"] not in ("identity", "none"):
        user_cfg = resolve_kernel(cfg["kernel.user_family"], ds.users)
        user_ind = select_inducing(ds.users, cfg["inducing.M_users"], cfg["seed"])
    log = FitLog()
    state = crowd_fit(ds.items, ds.users if user_cfg is not None else None, ds.u, ds.a, ds.b, ds.y, items_cfg,
                      user_cfg, item_ind, user_ind, hyper_from(cfg), schedule, n_users=ds.n_users,
                      derivative=cfg["model.derivative"], log=log)
    return state, log


def cmd_train(args):
    cfg = _resolved(args)
    if args.model:
        cfg["model"] = args.model
    with guarded(args.out):
        ds = _load_dir(args.data)
        model, logs = train_model(cfg, ds)
        meta = {"item_ids": ds.item_ids, "user_ids": ds.user_ids}
        save_model(model, os.path.join(args.out, "model.json"), meta)
        with open(os.path.join(args.out, "elbo.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if isinstance(logs, dict):
                w.writerow(["user_id", "iteration", "elbo"])
                for j, log in logs.items():
                    for it, val in log.elbo:
                        w.writerow([ds.user_ids[j], it, repr(float(val))])
            else:
                w.writerow(["iteration", "elbo"])
                for it, val in logs.elbo:
                    w.writerow([it, repr(float(val))])
        _echo_config(cfg, args.out)
    print(f"trained {cfg['model']} on {ds.P} pairs; model written to {os.path.join(args.out, 'model.json')}")


# --------------------------------------------------------------------------- predict


def _read_pairs(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["user_id", "item_a", "item_b"]:
        raise DataLoadError(f"{path}: header must start with user_id,item_a,item_b")
    has_label = len(header) > 3 and header[3] == "label"
    return rows[1:], has_label


def _user_query(state: CrowdState, meta, users_path):
    """User ids plus the features/indices needed by each component type."""
    train_ids = list(meta.get("user_ids", [str(j) for j in range(state.n_users)]))
    needs_features = any(not f.diagonal for f in state.w)
    if users_path is None:
        if needs_features:
            raise InvalidInputError("this model uses a user kernel: pass --users with user features")
        return train_ids, None, np.arange(len(train_ids))
    ids, feats = load_features(users_path)
    index = {k: j for j, k in enumerate(train_ids)}
    has_identity = any(f.diagonal for f in state.w)
    if has_identity:
        missing = [k for k in ids if k not in index]
        if missing:
            raise InvalidInputError(f"users unknown to the identity components: {', '.join(missing[:5])}")
    idx = np.array([index.get(k, 0) for k in ids], dtype=np.int64)
    return ids, (feats if needs_features else None), (idx if has_identity else None)


def cmd_predict(args):
    with guarded(args.out):
        model, meta = load_model(args.model, with_meta=True)
        item_ids, X = load_features(args.items)
        item_index = {k: i for i, k in enumerate(item_ids)}
        pair_rows, has_label = _read_pairs(args.pairs) if args.pairs else ([], False)
        if isinstance(model, CrowdState):
            user_ids, feats, uidx = _user_query(model, meta, args.users)
            pred = crowd_predict(model, X, feats, uidx)
            header = ["item_id"] + list(user_ids) + ["consensus"]
            table = np.column_stack([pred.F, pred.t])
        elif isinstance(model, GPPLPerUser):
            user_ids = list(meta.get("user_ids", [str(j) for j in range(model.n_users)]))
            F = model.predict_f(X)
            header = ["item_id"] + user_ids + ["consensus"]
            table = np.column_stack([F, F.mean(axis=1)])
        else:
            user_ids = []
            header = ["item_id", "f"]
            table = gppl_predict(model, X, full_cov=False)[0][:, None]
        with open(os.path.join(args.out, "utilities.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, row in zip(item_ids, table):
                w.writerow([k] + [repr(float(v)) for v in row])
        if args.pairs:
            uindex = {k: j for j, k in enumerate(user_ids)}
            try:
                a = np.array([item_index[r[1]] for r in pair_rows], dtype=np.int64)
                b = np.array([item_index[r[2]] for r in pair_rows], dtype=np.int64)
            except KeyError as exc:
                raise InvalidInputError(f"pair refers to unknown item id {exc.args[0]!r}") from None
            if isinstance(model, GPPLState):
                p = gppl_predict_pairs(model, X, a, b)
            else:
                try:
                    pu = np.array([uindex[r[0]] for r in pair_rows], dtype=np.int64)
                except KeyError as exc:
                    raise InvalidInputError(f"pair refers to unknown user id {exc.args[0]!r}") from None
                if isinstance(model, CrowdState):
                    p = crowd_predict_pairs(model, X, a, b, pu, feats, uidx)
                else:
                    p = model.predict_pairs(X, a, b, pu)
            with open(os.path.join(args.out, "pair_probs.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["user_id", "item_a", "item_b", "prob"] + (["label"] if has_label else []))
                for r, prob in zip(pair_rows, p):
                    w.writerow(r[:3] + [repr(float(prob))] + ([r[3]] if has_label else []))
    print(f"predictions written to {args.out}")


# --------------------------------------------------------------------------- evaluate


def _read_utilities(path):
    header, ids, vals = load_gold(path)
    return header, ids, vals


def evaluate_dirs(pred_dir, gold_dir, run_id="run", method="model"):
    rows = []
    pp = os.path.join(pred_dir, "pair_probs.csv")
    if os.path.exists(pp):
        with open(pp, newline="") as fh:
            recs = list(csv.DictReader(fh))
        if recs and "label" in recs[0]:
            p = np.array([float(r["prob"]) for r in recs])
            y = np.array([int(r["label"]) for r in recs])
            rows += [(run_id, method, "accuracy", accuracy(p, y)), (run_id, method, "cee", cross_entropy(p, y))]
    up = os.path.join(pred_dir, "utilities.csv")
    if os.path.exists(up):
        header, ids, U = _read_utilities(up)
        cols = header[1:]
        consensus = U[:, cols.index("consensus")] if "consensus" in cols else U[:, cols.index("f")] if "f" in cols else None
        gt = os.path.join(gold_dir, "gold_t.csv")
        if consensus is not None and os.path.exists(gt):
            _, gids, gvals = load_gold(gt)
            pos = {k: i for i, k in enumerate(ids)}
            common = [k for k in gids if k in pos]
            g = gvals[[gids.index(k) for k in common], 0]
            rows.append((run_id, method, "tau_consensus", kendall_tau(consensus[[pos[k] for k in common]], g)))
        gf = os.path.join(gold_dir, "gold_f.csv")
        if os.path.exists(gf):
            gheader, gids, gvals = load_gold(gf)
            pos = {k: i for i, k in enumerate(ids)}
            common = [k for k in gids if k in pos]
            gi = [gids.index(k) for k in common]
            pi = [pos[k] for k in common]
            taus = []
            for j, uid in enumerate(gheader[1:]):
                if uid in cols and uid != "consensus":
                    taus.append(kendall_tau(U[pi, cols.index(uid)], gvals[gi, j]))
                elif "f" in cols:
                    taus.append(kendall_tau(U[pi, cols.index("f")], gvals[gi, j]))
            if taus:
                rows.append((run_id, method, "tau_personal", float(np.mean(taus))))
    if not rows:
        raise InvalidInputError("nothing to evaluate: no labelled pair probabilities or gold utilities found")
    return rows


def cmd_evaluate(args):
    with guarded(args.out):
        rows = evaluate_dirs(args.pred, args.gold, args.run_id, args.method)
        write_metrics(os.path.join(args.out, "metrics.csv"), rows)
    for r in rows:
        print(f"{r[2]}: {r[3]:.4f}")


# --------------------------------------------------------------------------- bench


def cmd_bench(args):
    cfg = _resolved(args)
    with guarded(args.out):
        rows = bench_mod.run_sweep(cfg["bench.model"], cfg["bench.sweep"], int_list(cfg["bench.values"]),
                                   N=cfg["bench.N"], P=cfg["bench.P"], M=cfg["bench.M"],
                                   batch_size=cfg["bench.batch_size"], iterations=cfg["bench.iterations"],
                                   seed=cfg["seed"])
        bench_mod.write_rows(os.path.join(args.out, "timing.csv"), rows)
        _echo_config(cfg, args.out)
    for value, (ms, nbytes) in bench_mod.summarise(rows).items():
        print(f"{cfg['bench.sweep']}={value}: median {ms:.3f} ms/iteration, state {nbytes} bytes")


# --------------------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="crowdpref", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--threads", type=int, default=0, help="cap BLAS and numba threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a simulated crowd dataset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="fit a model to a dataset directory")
    p.add_argument("data", help="directory with items.csv, users.csv (optional) and pairs.csv")
    p.add_argument("--model", choices=("gppl", "crowd", "gppl-per-user"), help="overrides the configured model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict utilities and pair probabilities")
    p.add_argument("model", help="model.json written by train")
    p.add_argument("--items", required=True, help="items CSV")
    p.add_argument("--users", help="users CSV (required for user-kernel crowd models)")
    p.add_argument("--pairs", help="pairs CSV: user_id,item_a,item_b[,label]")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against gold data")
    p.add_argument("--pred", required=True, help="directory written by predict")
    p.add_argument("--gold", required=True, help="directory with gold_t.csv / gold_f.csv")
    p.add_argument("--run-id", default="run")
    p.add_argument("--method", default="model")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", parents=[common], help="time training iterations across a sweep")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    limiter = _set_threads(args.threads)
    try:
        args.func(args)
    except CrowdPrefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
