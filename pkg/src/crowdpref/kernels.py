"""Kernel functions, length-scale heuristics and covariance construction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky

from . import _accel
from .exceptions import InvalidConfigError, InvalidInputError, NumericalFailure

FAMILIES = ("matern32", "sqexp", "identity")
_ALIASES = {
    "matern32": "matern32",
    "matern_3_2": "matern32",
    "matern-3/2": "matern32",
    "sqexp": "sqexp",
    "se": "sqexp",
    "rbf": "sqexp",
    "squared_exponential": "sqexp",
    "identity": "identity",
    "none": "identity",
}

JITTER_START = 1e-6
JITTER_MAX = 1e-2
SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family plus one length-scale per feature dimension.

    ``jitter`` is the first value added to covariance diagonals before a
    Cholesky factorisation; it escalates by 10x up to ``1e-2`` on failure.
    """

    family: str = "matern32"
    length_scales: np.ndarray = field(default_factory=lambda: np.ones(1))
    jitter: float = JITTER_START

    def __post_init__(self):
        fam = _ALIASES.get(str(self.family).lower())
        if fam is None:
            raise InvalidConfigError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        if fam != "identity":
            if ls.ndim != 1 or ls.size == 0:
                raise InvalidConfigError("length_scales must be a non-empty 1-D array")
            if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
                raise InvalidConfigError(f"length-scales must be positive and finite, got {ls}")
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        if not (np.isfinite(self.jitter) and self.jitter > 0):
            raise InvalidConfigError(f"jitter must be positive, got {self.jitter}")

    @property
    def is_identity(self) -> bool:
        return self.family == "identity"

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "length_scales": [float(v) for v in self.length_scales],
            "jitter": float(self.jitter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelConfig":
        return cls(d["family"], np.asarray(d["length_scales"], dtype=float), float(d["jitter"]))

    def __eq__(self, other):
        if not isinstance(other, KernelConfig):
            return NotImplemented
        return (
            self.family == other.family
            and self.jitter == other.jitter
            and np.array_equal(self.length_scales, other.length_scales)
        )

    __hash__ = None


def identity_kernel() -> KernelConfig:
    return KernelConfig("identity", np.ones(1))


def as_features(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains NaN or Inf values")
    return X


def _check_dims(X, cfg):
    if X.shape[1] != cfg.length_scales.size:
        raise InvalidInputError(
            f"feature dimension {X.shape[1]} does not match {cfg.length_scales.size} length-scales"
        )


def _profile(sqdist, family):
    if family == "matern32":
        r = SQRT3 * np.sqrt(sqdist)
        return (1.0 + r) * np.exp(-r)
    return np.exp(-0.5 * sqdist)


def kernel_value(x1, x2, cfg: KernelConfig) -> float:
    """Covariance between two feature vectors under ``cfg``."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.shape != x2.shape:
        raise InvalidInputError(f"vectors differ in shape: {x1.shape} vs {x2.shape}")
    if cfg.is_identity:
        return float(np.array_equal(x1, x2))
    if x1.size != cfg.length_scales.size:
        raise InvalidInputError(
            f"vector dimension {x1.size} does not match {cfg.length_scales.size} length-scales"
        )
    sq = float(np.sum(((x1 - x2) / cfg.length_scales) ** 2))
    return float(_profile(np.array(sq), cfg.family))


def covariance_matrix(X1, X2, cfg: KernelConfig) -> np.ndarray:
    """Matrix of kernel values between the rows of ``X1`` and ``X2``.

    When ``X2`` is ``X1`` (or ``None``) the result is exactly symmetric with a
    unit diagonal. The identity family compares rows for equality; with
    zero-column inputs it compares row positions instead.
    """
    same = X2 is None or X2 is X1
    X1 = as_features(X1, "X1")
    X2 = X1 if same else as_features(X2, "X2")
    if cfg.is_identity:
        if X1.shape[1] == 0 or X2.shape[1] == 0:
            return np.eye(X1.shape[0], X2.shape[0])
        if X1.shape[1] != X2.shape[1]:
            raise InvalidInputError("feature dimensions differ")
        return np.all(X1[:, None, :] == X2[None, :, :], axis=2).astype(float)
    _check_dims(X1, cfg)
    _check_dims(X2, cfg)
    inv_ls = 1.0 / cfg.length_scales
    if same:
        sq = _accel.scaled_sqdist_sym(np.ascontiguousarray(X1), inv_ls)
    else:
        sq = _accel.scaled_sqdist(np.ascontiguousarray(X1), np.ascontiguousarray(X2), inv_ls)
    return _profile(sq, cfg.family)


def pair_covariance(X, idx_a, idx_b, cfg: KernelConfig) -> np.ndarray:
    """``k(x_a, x_b)`` for each listed pair of rows (no full matrix)."""
    if cfg.is_identity:
        return (np.asarray(idx_a) == np.asarray(idx_b)).astype(float)
    Xa = X[idx_a] / cfg.length_scales
    Xb = X[idx_b] / cfg.length_scales
    sq = np.einsum("ij,ij->i", Xa - Xb, Xa - Xb)
    return _profile(sq, cfg.family)


def median_heuristic(X) -> np.ndarray:
    """Per-dimension median of ``|x_id - x_jd|`` over all ordered pairs.

    Pairs with ``i == j`` are included. A zero median falls back to the median
    over non-zero differences, and then to 1.
    """
    X = as_features(X)
    if X.shape[0] < 2:
        raise InvalidInputError("median heuristic needs at least two rows")
    out = np.empty(X.shape[1])
    for d in range(X.shape[1]):
        col = np.ascontiguousarray(X[:, d])
        med = _accel.abs_diff_median(col)
        if med == 0.0:
            med = _accel.nonzero_abs_diff_median(col)
        out[d] = med if med > 0.0 else 1.0
    return out


def scaled_median_heuristic(X) -> np.ndarray:
    """Median heuristic multiplied by ``20 * sqrt(D)`` for high-dimensional inputs."""
    X = as_features(X)
    return 20.0 * np.sqrt(X.shape[1]) * median_heuristic(X)


def jittered_cholesky(K, jitter: float = JITTER_START, max_jitter: float = JITTER_MAX):
    """Lower Cholesky factor of ``K + jitter * I``, escalating jitter on failure.

    Returns ``(L, jitter_used)``.
    """
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise NumericalFailure("matrix contains non-finite entries")
    n = K.shape[0]
    j = float(jitter)
    while True:
        try:
            L = cholesky(K + j * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, j
        except np.linalg.LinAlgError:
            pass
        j *= 10.0
        if j > max_jitter * (1 + 1e-9):
            raise NumericalFailure(f"Cholesky failed with jitter up to {max_jitter:g} (n={n})")
