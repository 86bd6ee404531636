"""Flat ``key = value`` run configuration.

Blank lines and lines starting with ``#`` are ignored. Every key must be one
of ``DEFAULTS``; values are converted to the default's type. List values
(``bench.*`` sweeps) are comma separated.
"""
from __future__ import annotations

import os

from .crowd import CrowdHyperparams
from .data import SimulationConfig
from .exceptions import InvalidConfigError
from .svi import SviSchedule

DEFAULTS = {
    "seed": 0,
    "model": "crowd",
    "kernel.family": "matern32",
    "kernel.user_family": "matern32",
    "inducing.M_items": 500,
    "inducing.M_users": 500,
    "svi.batch_size": 1000,
    "svi.delay": 1.0,
    "svi.forgetting_rate": 0.9,
    "svi.max_iterations": 200,
    "svi.convergence_tol": 1e-4,
    "svi.inner_max": 20,
    "svi.inner_tol": 1e-3,
    "svi.elbo_every": 5,
    "model.C": 20,
    "model.user_kernel_split": -1,
    "model.derivative": "probit",
    "hyper.alpha0_t": 1.0,
    "hyper.beta0_t": 100.0,
    "hyper.alpha0_v": 1.0,
    "hyper.beta0_v": 100.0,
    "hyper.alpha0_w": 1.0,
    "hyper.beta0_w": 10.0,
    "sim.grid_side": 20,
    "sim.n_items": 100,
    "sim.U": 25,
    "sim.C_true": 5,
    "sim.s_t": 1.0,
    "sim.s_v": "random",
    "sim.s_v_min": 0.1,
    "sim.s_v_max": 10.0,
    "sim.s_w": 1.0,
    "sim.P": 900,
    "sim.user_dims": 2,
    "bench.sweep": "P",
    "bench.values": "250,500,1000,2000",
    "bench.N": 200,
    "bench.P": 1000,
    "bench.M": 50,
    "bench.batch_size": 100,
    "bench.iterations": 20,
    "bench.model": "gppl",
}

CHOICES = {
    "model": ("gppl", "crowd", "gppl-per-user"),
    "model.derivative": ("probit", "bernoulli"),
    "bench.sweep": ("P", "N", "M", "batch_size"),
    "bench.model": ("gppl", "crowd"),
}


def _convert(key, raw):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise InvalidConfigError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None
    if key in CHOICES and raw not in CHOICES[key]:
        raise InvalidConfigError(f"config key {key!r}: {raw!r} is not one of {CHOICES[key]}")
    return raw


def parse_config(text: str) -> dict:
    cfg = dict(DEFAULTS)
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise InvalidConfigError(f"line {n}: expected 'key = value'")
        if key not in DEFAULTS:
            raise InvalidConfigError(f"line {n}: unknown config key {key!r}")
        cfg[key] = _convert(key, value)
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return dict(DEFAULTS)
    if not os.path.exists(path):
        raise InvalidConfigError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def schedule_from(cfg: dict) -> SviSchedule:
    return SviSchedule(
        batch_size=cfg["svi.batch_size"],
        delay=cfg["svi.delay"],
        forgetting_rate=cfg["svi.forgetting_rate"],
        max_iterations=cfg["svi.max_iterations"],
        convergence_tol=cfg["svi.convergence_tol"],
        inner_max=cfg["svi.inner_max"],
        inner_tol=cfg["svi.inner_tol"],
        elbo_every=cfg["svi.elbo_every"],
        seed=cfg["seed"],
    )


def hyper_from(cfg: dict) -> CrowdHyperparams:
    split = cfg["model.user_kernel_split"]
    return CrowdHyperparams(
        alpha0_t=cfg["hyper.alpha0_t"], beta0_t=cfg["hyper.beta0_t"],
        alpha0_v=cfg["hyper.alpha0_v"], beta0_v=cfg["hyper.beta0_v"],
        alpha0_w=cfg["hyper.alpha0_w"], beta0_w=cfg["hyper.beta0_w"],
        C=cfg["model.C"], user_kernel_split=None if split < 0 else split,
    )


def simulation_from(cfg: dict) -> SimulationConfig:
    s_v = cfg["sim.s_v"]
    if s_v != "random":
        try:
            s_v = float(s_v)
        except ValueError:
            raise InvalidConfigError("sim.s_v must be a number or 'random'") from None
    else:
        s_v = None
    return SimulationConfig(
        grid_side=cfg["sim.grid_side"], n_items=cfg["sim.n_items"] or None, U=cfg["sim.U"],
        C_true=cfg["sim.C_true"], s_t=cfg["sim.s_t"], s_v=s_v, s_v_range=(cfg["sim.s_v_min"], cfg["sim.s_v_max"]),
        s_w=cfg["sim.s_w"], P=cfg["sim.P"], user_dims=cfg["sim.user_dims"], seed=cfg["seed"],
    )


def int_list(text: str) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InvalidConfigError(f"expected comma-separated integers, got {text!r}") from None
