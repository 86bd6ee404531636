"""Versioned JSON container for fitted models.

Layout (``format_version`` 1)::

    {"format": "crowdpref-model", "format_version": 1, "model": "gppl" | "crowd" | "gppl-per-user", ...}

Priors are stored as ``{"kernel": KernelConfig.to_dict(), "points": [[...]] | null, "M": int}``
and factors as ``GaussianFactor.state_dict()``. Floats are written with
``repr`` precision so a save/load round trip is exact.
"""
from __future__ import annotations

import json

import numpy as np

from .baselines import GPPLPerUser
from .crowd import CrowdHyperparams, CrowdState
from .exceptions import DataLoadError
from .gppl import GPPLState
from .kernels import KernelConfig
from .svi import GaussianFactor, InducingPrior

FORMAT = "crowdpref-model"
FORMAT_VERSION = 1


def _prior_dict(prior: InducingPrior | None):
    if prior is None:
        return None
    return {
        "kernel": prior.cfg.to_dict(),
        "points": None if prior.Z is None else prior.Z.tolist(),
        "M": prior.M,
    }


def _prior_from(d):
    if d is None:
        return None
    cfg = KernelConfig.from_dict(d["kernel"])
    pts = None if d["points"] is None else np.asarray(d["points"], dtype=float)
    return InducingPrior(cfg, pts, M=d["M"])


def _factor_from(prior, d):
    f = GaussianFactor(prior, d["alpha0"], d["beta0"], diagonal=d["diagonal"])
    f.load_state(d)
    return f


def gppl_to_dict(state: GPPLState) -> dict:
    return {
        "prior": _prior_dict(state.prior),
        "factor": state.factor.state_dict(),
        "gamma": state.gamma,
        "lam": state.lam,
        "derivative": state.derivative,
        "iteration": state.iteration,
    }


def gppl_from_dict(d) -> GPPLState:
    prior = _prior_from(d["prior"])
    return GPPLState(prior, _factor_from(prior, d["factor"]), d["gamma"], d["lam"], d["derivative"], d["iteration"])


def crowd_to_dict(state: CrowdState) -> dict:
    return {
        "item_prior": _prior_dict(state.item_prior),
        "user_prior": _prior_dict(state.user_prior),
        "index_prior": _prior_dict(state.index_prior),
        "t": state.t.state_dict(),
        "v": [f.state_dict() for f in state.v],
        "w": [f.state_dict() for f in state.w],
        "hyper": {k: getattr(state.hyper, k) for k in CrowdHyperparams.__dataclass_fields__},
        "gamma": state.gamma,
        "lam": state.lam,
        "derivative": state.derivative,
        "iteration": state.iteration,
    }


def crowd_from_dict(d) -> CrowdState:
    item_prior = _prior_from(d["item_prior"])
    user_prior = _prior_from(d["user_prior"])
    index_prior = _prior_from(d["index_prior"])
    t = _factor_from(item_prior, d["t"])
    v = [_factor_from(item_prior, fd) for fd in d["v"]]
    w = [_factor_from(index_prior if fd["diagonal"] else user_prior, fd) for fd in d["w"]]
    return CrowdState(item_prior, user_prior, index_prior, t, v, w, CrowdHyperparams(**d["hyper"]),
                      d["gamma"], d["lam"], d["derivative"], d["iteration"])


def to_dict(model) -> dict:
    head = {"format": FORMAT, "format_version": FORMAT_VERSION}
    if isinstance(model, GPPLState):
        return {**head, "model": "gppl", "state": gppl_to_dict(model)}
    if isinstance(model, CrowdState):
        return {**head, "model": "crowd", "state": crowd_to_dict(model)}
    if isinstance(model, GPPLPerUser):
        return {
            **head,
            "model": "gppl-per-user",
            "n_users": model.n_users,
            "states": {str(j): gppl_to_dict(st) for j, st in model.states_.items()},
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")


def from_dict(d):
    if d.get("format") != FORMAT:
        raise DataLoadError("not a crowdpref model file")
    if d.get("format_version") != FORMAT_VERSION:
        raise DataLoadError(f"unsupported model format version {d.get('format_version')}")
    kind = d.get("model")
    if kind == "gppl":
        return gppl_from_dict(d["state"])
    if kind == "crowd":
        return crowd_from_dict(d["state"])
    if kind == "gppl-per-user":
        m = GPPLPerUser()
        m.n_users = int(d["n_users"])
        m.states_ = {int(j): gppl_from_dict(s) for j, s in d["states"].items()}
        return m
    raise DataLoadError(f"unknown model kind {kind!r}")


def save_model(model, path, meta: dict | None = None) -> None:
    """Write the container; ``meta`` (e.g. item and user ids) is stored alongside."""
    d = to_dict(model)
    d["meta"] = meta or {}
    with open(path, "w") as fh:
        json.dump(d, fh)


def load_model(path, with_meta: bool = False):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataLoadError(f"cannot read model file {path}: {exc}") from exc
    model = from_dict(d)
    return (model, d.get("meta", {})) if with_meta else model
