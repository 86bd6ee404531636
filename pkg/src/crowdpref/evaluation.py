"""Metrics for pairwise predictions, rankings and latent components."""
from __future__ import annotations

import csv

import numpy as np
from scipy.stats import kendalltau

from .exceptions import InvalidInputError
from .likelihood import clamp_prob


def _pair_inputs(probs, labels):
    p = np.asarray(probs, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if p.size == 0:
        raise InvalidInputError("no predictions to score")
    if p.shape != y.shape:
        raise InvalidInputError("predictions and labels differ in length")
    return p, y


def accuracy(probs, labels) -> float:
    """Fraction of labels predicted correctly; ``p == 0.5`` earns half credit."""
    p, y = _pair_inputs(probs, labels)
    score = np.where(p == 0.5, 0.5, ((p > 0.5) == (y == 1)).astype(float))
    return float(score.mean())


def cross_entropy(probs, labels) -> float:
    p, y = _pair_inputs(probs, labels)
    p = clamp_prob(p)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def kendall_tau(predicted, gold) -> float:
    """Tau-b rank correlation between two score vectors."""
    predicted = np.asarray(predicted, dtype=float).ravel()
    gold = np.asarray(gold, dtype=float).ravel()
    if predicted.size != gold.size:
        raise InvalidInputError("score vectors differ in length")
    if gold.size < 2:
        raise InvalidInputError("need at least two items to rank")
    if np.all(gold == gold[0]):
        raise InvalidInputError("gold scores are constant: tau is undefined")
    if np.all(predicted == predicted[0]):
        return 0.0
    return float(kendalltau(predicted, gold, variant="b")[0])


def _pearson_matrix(A, B):
    """Correlations between columns of A and B; zero-variance columns give 0."""
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        R = (A.T @ B) / np.outer(na, nb)
    R[~np.isfinite(R)] = 0.0
    return R


def match_components(true_components, inferred_components) -> float:
    """Greedy matching by highest signed Pearson correlation; mean over matched pairs.

    Columns are components. The best remaining (true, inferred) pair is
    matched and both are removed until every true component has a match.
    """
    T = np.asarray(true_components, dtype=float)
    Inf = np.asarray(inferred_components, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if Inf.ndim == 1:
        Inf = Inf[:, None]
    if T.shape[0] != Inf.shape[0]:
        raise InvalidInputError("components must be evaluated on the same items")
    if Inf.shape[1] < T.shape[1]:
        raise InvalidInputError("need at least as many inferred as true components")
    if T.shape[1] == 0:
        raise InvalidInputError("no true components to match")
    R = _pearson_matrix(T, Inf)
    free_t = np.ones(T.shape[1], dtype=bool)
    free_i = np.ones(Inf.shape[1], dtype=bool)
    matched = []
    for _ in range(T.shape[1]):
        masked = np.where(free_t[:, None] & free_i[None, :], R, -np.inf)
        i, j = np.unravel_index(np.argmax(masked), masked.shape)
        matched.append(R[i, j])
        free_t[i] = False
        free_i[j] = False
    return float(np.mean(matched))


def per_user_consensus(per_user_predictions) -> np.ndarray:
    """Mean of the user columns."""
    F = np.asarray(per_user_predictions, dtype=float)
    if F.ndim != 2 or F.shape[1] == 0:
        raise InvalidInputError("expected an items x users matrix")
    return F.mean(axis=1)


def write_metrics(path, rows) -> None:
    """Rows of ``(run_id, method, metric, value)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "method", "metric", "value"])
        for run_id, method, metric, value in rows:
            w.writerow([run_id, method, metric, repr(float(value))])
