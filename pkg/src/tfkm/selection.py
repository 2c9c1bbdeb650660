"""
Choosing the number of clusters, the latent rank and the trimming level.

The number of clusters follows Hartigan's rule of thumb on the within
dispersion ``W_c`` of consecutive fits::

    H_c = (W_c / W_{c+1} - 1) * (p - c - 1)

Clusters keep being added while ``H_c`` exceeds the threshold (10), so the
selected ``c`` is the smallest one whose statistic drops to it. The rank is
read off the singular values of the centroid matrix of a full-rank fit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fkm import FkmConfig, FkmSolution, derive_seed, run

__all__ = [
    "GridEntry",
    "SelectionGrid",
    "within_dispersion",
    "hartigan",
    "centroid_singular_values",
    "fit_grid",
    "select_clusters",
    "select_rank",
    "select_alpha",
    "STRATEGIES",
]

THRESHOLD = 10.0
# label -> (rank rule, trimmed); "fixed" uses the configured r, clipped to c-1
STRATEGIES = {
    "fixed-r": ("fixed", False),
    "fixed-r-trimmed": ("fixed", True),
    "r=c-1": ("c-1", False),
    "r=c-1-trimmed": ("c-1", True),
}


@dataclass
class GridEntry:
    c: int
    r: int
    alpha: float
    W: float                    # squared Euclidean, equals the objective
    W_plain: float              # plain Euclidean distances
    objective: float
    singular_values: list
    seed: int
    strategy: str = ""
    H: float | None = None      # (p - c - 1) scaling
    H_plain: float | None = None
    H_n: float | None = None    # (n - c - 1) scaling, Hartigan's original

    def statistic(self, variant: str = "squared"):
        return {"squared": self.H, "plain": self.H_plain, "n": self.H_n}[variant]


@dataclass
class SelectionGrid:
    entries: list = field(default_factory=list)
    threshold: float = THRESHOLD
    p: int = 0
    n: int = 0

    def series(self, strategy: str | None = None, alpha: float | None = None):
        """Entries of one (strategy, alpha) line, sorted by c."""
        rows = self.entries
        if strategy is not None:
            rows = [e for e in rows if e.strategy == strategy]
        if alpha is not None:
            rows = [e for e in rows if math.isclose(e.alpha, alpha)]
        keys = {(e.strategy, e.alpha) for e in rows}
        if len(keys) > 1:
            raise ValueError(f"grid holds several lines {sorted(keys)}; pick a strategy and alpha")
        return sorted(rows, key=lambda e: e.c)

    def table(self):
        """Rows for a comma-separated report."""
        header = ["strategy", "c", "r", "alpha", "W", "W_plain", "H", "H_plain", "H_n",
                  "objective", "singular_values"]
        rows = [[e.strategy, e.c, e.r, e.alpha, e.W, e.W_plain, e.H, e.H_plain, e.H_n,
                 e.objective, " ".join(repr(float(s)) for s in e.singular_values)]
                for e in sorted(self.entries, key=lambda e: (e.strategy, e.alpha, e.c))]
        return header, rows


def within_dispersion(solution: FkmSolution, squared: bool = True) -> float:
    """Sum over untrimmed rows of the distance from score to centroid."""
    keep = solution.labels >= 0
    d = solution.scores[keep] - solution.centroids[solution.labels[keep]]
    sq = np.einsum("ij,ij->i", d, d)
    return float(sq.sum() if squared else np.sqrt(sq).sum())


def hartigan(W_c: float, W_c_plus_1: float, p: int, c: int) -> float:
    """``(W_c / W_{c+1} - 1) * (p - c - 1)``; pass ``n`` as ``p`` for the original."""
    if not W_c_plus_1 > 0:
        raise ValueError("W_{c+1} must be positive")
    return (W_c / W_c_plus_1 - 1.0) * (p - c - 1)


def centroid_singular_values(solution: FkmSolution) -> np.ndarray:
    return np.linalg.svd(solution.centroids, compute_uv=False)


def _alpha_key(alpha):
    return int(round(alpha * 1_000_000))


def _fill_statistics(rows, p, n, compare_r):
    rows = sorted(rows, key=lambda e: e.c)
    for a, b in zip(rows, rows[1:]):
        if b.c != a.c + 1 or (compare_r and a.r != b.r):
            continue
        a.H = hartigan(a.W, b.W, p, a.c) if b.W > 0 else None
        a.H_plain = hartigan(a.W_plain, b.W_plain, p, a.c) if b.W_plain > 0 else None
        a.H_n = hartigan(a.W, b.W, n, a.c) if b.W > 0 else None


def fit_grid(X, cs, r: int = 2, alphas=(0.0,), strategies=("fixed-r",), restarts: int = 100,
             seed: int = 0, max_iters: int = 200, rel_tol: float = 1e-9,
             cov_scope: str = "all", threshold: float = THRESHOLD) -> SelectionGrid:
    """Fit every (c, r, alpha) cell needed by the requested strategies.

    ``alphas`` are the trimming levels of the trimmed strategies; the
    untrimmed ones run at alpha 0. Each cell is fitted once with its own
    seed derived from ``seed`` and the cell key, so strategies sharing a
    cell see the same solution. Under a fixed rank, cells with ``c <= r``
    run at ``r = c - 1`` and their ``H_c`` is left empty because the
    neighbouring fit has a different rank.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    n, p = X.shape
    cs = sorted(set(int(c) for c in cs))
    if not cs or cs[0] < 2:
        raise ValueError("cluster grid must contain integers >= 2")
    cache: dict = {}
    grid = SelectionGrid(threshold=threshold, p=p, n=n)
    for label in strategies:
        if label not in STRATEGIES:
            raise ValueError(f"unknown strategy {label!r}; choose from {sorted(STRATEGIES)}")
        rule, trimmed = STRATEGIES[label]
        for alpha in (alphas if trimmed else (0.0,)):
            line = []
            for c in cs:
                rr = min(r, c - 1) if rule == "fixed" else c - 1
                key = (c, rr, _alpha_key(alpha))
                if key not in cache:
                    cell_seed = derive_seed(seed, *key)
                    cfg = FkmConfig(c=c, r=rr, alpha=alpha, restarts=restarts, max_iters=max_iters,
                                    rel_tol=rel_tol, seed=cell_seed, cov_scope=cov_scope)
                    sol = run(X, cfg)
                    cache[key] = (sol, cell_seed)
                sol, cell_seed = cache[key]
                line.append(GridEntry(
                    c=c, r=rr, alpha=float(alpha), W=within_dispersion(sol, True),
                    W_plain=within_dispersion(sol, False), objective=sol.objective,
                    singular_values=centroid_singular_values(sol).tolist(), seed=cell_seed,
                    strategy=label))
            _fill_statistics(line, p, n, compare_r=(rule == "fixed"))
            grid.entries.extend(line)
    return grid


def select_clusters(grid: SelectionGrid, strategy: str | None = None, alpha: float | None = None,
                    threshold: float | None = None, variant: str = "squared") -> int:
    """Smallest ``c`` whose statistic is at or below the threshold.

    Cells without a statistic are skipped. A single-cell line returns its
    ``c``; when no statistic drops to the threshold the largest ``c`` is
    returned with a warning.
    """
    rows = grid.series(strategy, alpha)
    if not rows:
        raise ValueError("empty selection grid")
    if len(rows) == 1:
        return rows[0].c
    thr = grid.threshold if threshold is None else threshold
    for e in rows:
        h = e.statistic(variant)
        if h is not None and h <= thr:
            return e.c
    warnings.warn(f"no H_c at or below {thr}; returning the largest c", RuntimeWarning, stacklevel=2)
    return rows[-1].c


def select_rank(solution, rel_threshold: float = 0.05) -> int:
    """Number of centroid singular values at least ``rel_threshold`` of the largest.

    Accepts a fitted solution (ideally at ``r = c - 1``) or the singular
    values themselves. Never exceeds ``c - 1``.
    """
    if isinstance(solution, FkmSolution):
        sv = centroid_singular_values(solution)
        cap = solution.centroids.shape[0] - 1
    else:
        sv = np.sort(np.abs(np.asarray(solution, dtype=float)))[::-1]
        cap = sv.size
    if sv.size == 0 or not sv[0] > 0:
        raise ValueError("largest singular value is zero")
    return int(min(np.count_nonzero(sv / sv[0] >= rel_threshold), cap))


def select_alpha(X, cs, alphas=(0.0, 0.05, 0.10, 0.15, 0.20), r: int = 2, restarts: int = 100,
                 seed: int = 0, variant: str = "squared", **kw):
    """Trimming level whose cluster grid shows the sharpest Hartigan peak.

    Returns ``(alpha, grid)``; ties go to the smaller alpha. The grid holds
    one fixed-rank line per alpha.
    """
    alphas = sorted(set(float(a) for a in alphas))
    if not alphas:
        raise ValueError("empty alpha grid")
    grid = fit_grid(X, cs, r=r, alphas=alphas, strategies=("fixed-r-trimmed",),
                    restarts=restarts, seed=seed, **kw)
    if len(alphas) == 1:
        return alphas[0], grid
    best, best_peak = alphas[0], -math.inf
    for a in alphas:
        hs = [e.statistic(variant) for e in grid.series("fixed-r-trimmed", a)]
        peak = max((h for h in hs if h is not None), default=-math.inf)
        if peak > best_peak:
            best, best_peak = a, peak
    return best, grid
