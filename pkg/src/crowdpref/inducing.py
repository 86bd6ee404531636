"""Inducing-point selection by k-means++ seeding and Lloyd refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError
from .kernels import as_features

DEFAULT_M = 500


@dataclass(frozen=True)
class InducingSet:
    points: np.ndarray
    is_training_set: bool = False

    @property
    def M(self) -> int:
        return self.points.shape[0]


def _sqdist(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, M, rng):
    n = X.shape[0]
    centres = np.empty((M, X.shape[1]))
    centres[0] = X[rng.integers(n)]
    closest = _sqdist(X, centres[:1])[:, 0]
    for k in range(1, M):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centres[k] = X[idx]
        closest = np.minimum(closest, _sqdist(X, centres[k:k + 1])[:, 0])
    return centres


def select_inducing(X, M: int, seed: int = 0, tol: float = 1e-6, max_iter: int = 100) -> InducingSet:
    """Cluster centres of ``X`` used as inducing inputs.

    When ``M >= N`` the rows of ``X`` are returned unchanged. Otherwise
    k-means++ seeding is followed by Lloyd iterations until no centre moves by
    more than ``tol`` or ``max_iter`` is reached. Empty clusters are reseeded
    at the point farthest from its centre.
    """
    X = as_features(X)
    if X.shape[0] == 0:
        raise InvalidInputError("cannot select inducing points from an empty matrix")
    if M < 1:
        raise InvalidInputError(f"M must be at least 1, got {M}")
    if M >= X.shape[0]:
        return InducingSet(X.copy(), is_training_set=True)

    rng = np.random.default_rng(seed)
    centres = _kmeanspp(X, M, rng)
    for _ in range(max_iter):
        d = _sqdist(X, centres)
        assign = np.argmin(d, axis=1)
        counts = np.bincount(assign, minlength=M)
        new = np.zeros_like(centres)
        np.add.at(new, assign, X)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        if not np.all(nonempty):
            far = np.argsort(-d[np.arange(X.shape[0]), assign])
            for k, idx in zip(np.flatnonzero(~nonempty), far):
                new[k] = X[idx]
        shift = np.sqrt(((new - centres) ** 2).sum(1)).max()
        centres = new
        if shift < tol:
            break
    return InducingSet(centres)
