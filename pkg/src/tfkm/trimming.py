"""
Radial outlier scoring and trimming in the factor space.

Each row gets a Mahalanobis-type score ``t_i = n * d_i C_F^{-1} d_i'`` where
``d_i`` is the row's deviation from the mean score of its assigned cluster
and ``C_F`` the unbiased covariance of the scores. The ``floor(alpha * n)``
largest scores are trimmed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["RadialScores", "radial_scores", "flag_outliers", "trim_count"]

RIDGE_EPS = 1e-8
MAX_COND = 1e12


@dataclass
class RadialScores:
    t: np.ndarray
    cov: np.ndarray
    ridge_applied: bool = False


def trim_count(n: int, alpha: float) -> int:
    # small epsilon so that e.g. 0.1 * 10 floors to 1, not 0
    return int(math.floor(alpha * n + 1e-9))


def _group_means(F, labels, c):
    means = np.zeros((c, F.shape[1]))
    for j in range(c):
        members = labels == j
        if members.any():
            means[j] = F[members].mean(axis=0)
    return means


def radial_scores(F, membership, cov_rows=None, centers=None) -> RadialScores:
    """Score every row by its covariance-weighted deviation from its cluster.

    ``membership`` supplies the current (pre-trim) labels. Cluster means
    are the mean scores of the labelled members unless ``centers`` is
    given. ``cov_rows`` restricts the rows used for ``C_F`` (default: all).
    A near-singular ``C_F`` gets a small ridge.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[1] == 0:
        raise ValueError("scores must be an n x r matrix with r >= 1")
    n, r = F.shape
    labels = np.asarray(membership.labels)
    if np.any(labels < 0):
        raise ValueError("radial scores need a cluster label for every row")
    if centers is None:
        centers = _group_means(F, labels, int(labels.max()) + 1)
    diff = F - np.asarray(centers)[labels]

    Fc = F if cov_rows is None else F[cov_rows]
    cov = np.atleast_2d(np.cov(Fc, rowvar=False, ddof=1))
    ridge = False
    ev = np.linalg.eigvalsh(cov)
    if ev[0] <= 0 or ev[-1] / ev[0] > MAX_COND:
        tr = np.trace(cov)
        cov = cov + (RIDGE_EPS * (tr if tr > 0 else 1.0) / r) * np.eye(r)
        ridge = True
    sol = np.linalg.solve(cov, diff.T)
    t = n * np.einsum("ij,ji->i", diff, sol)
    return RadialScores(np.maximum(t, 0.0), cov, ridge)


def flag_outliers(scores, alpha: float) -> np.ndarray:
    """Boolean mask of the ``floor(alpha * n)`` rows with the largest scores.

    Ties at the cut flag the higher row index first.
    """
    if not 0 <= alpha <= 0.5:
        raise ValueError("alpha must lie in [0, 0.5]")
    t = np.asarray(getattr(scores, "t", scores), dtype=float)
    n = t.size
    m = trim_count(n, alpha)
    mask = np.zeros(n, dtype=bool)
    if m:
        order = np.lexsort((-np.arange(n), -t))
        mask[order[:m]] = True
    return mask
