"""
Planted-cluster data for validating trimmed factorial k-means.

Latent scores are drawn from ``c`` isotropic Gaussian blobs in ``r``
dimensions, embedded in ``p`` dimensions by random orthonormal loadings.
Noise is isotropic within the orthogonal complement of the loading span,
so the cluster subspace is the low within-variance subspace that the
method looks for. Radial outliers sit on a sphere well outside the blobs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fkm import gram_schmidt

__all__ = ["SyntheticSpec", "SyntheticData", "BankPanel", "generate", "make_bank_panel"]


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 365
    p: int = 100
    c: int = 4
    r: int = 2
    weights: tuple | None = None
    separation: float = 0.5      # radius of the ring of cluster centers
    spread: float = 0.05         # within-cluster sd of the latent scores
    noise: float = 5.0           # sd of the complement noise per direction
    outlier_fraction: float = 0.0
    outlier_magnitude: float = 0.3  # outlier radius beyond the ring
    seed: int = 0

    def __post_init__(self):
        w = self.cluster_weights
        if len(w) != self.c or min(w) < 0 or abs(sum(w) - 1) > 1e-9:
            raise ValueError("weights must be c non-negative numbers summing to 1")
        if not 0 <= self.outlier_fraction <= 0.5:
            raise ValueError("outlier fraction must lie in [0, 0.5]")
        if self.r > self.p:
            raise ValueError("r must not exceed p")

    @property
    def cluster_weights(self) -> tuple:
        return tuple(self.weights) if self.weights is not None else (1.0 / self.c,) * self.c


@dataclass
class SyntheticData:
    X: np.ndarray
    labels: np.ndarray          # true cluster, -1 for planted outliers
    loadings: np.ndarray
    centers: np.ndarray
    scores: np.ndarray

    @property
    def outliers(self) -> np.ndarray:
        return self.labels < 0


def _ring(c, r, radius, phase):
    centers = np.zeros((c, r))
    if r == 1:
        centers[:, 0] = radius * np.linspace(-1, 1, c) if c > 1 else 0.0
    else:
        ang = phase + 2 * np.pi * np.arange(c) / c
        centers[:, 0] = radius * np.cos(ang)
        centers[:, 1] = radius * np.sin(ang)
    return centers


def generate(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    n_out = int(math.floor(spec.outlier_fraction * spec.n + 1e-9))
    counts = rng.multinomial(spec.n - n_out, spec.cluster_weights)
    labels = np.concatenate([np.repeat(np.arange(spec.c), counts), -np.ones(n_out, dtype=int)])

    centers = _ring(spec.c, spec.r, spec.separation, rng.uniform(0, 2 * np.pi))
    scores = np.zeros((spec.n, spec.r))
    inl = labels >= 0
    scores[inl] = centers[labels[inl]] + spec.spread * rng.standard_normal((inl.sum(), spec.r))
    if n_out:
        u = rng.standard_normal((n_out, spec.r))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        scores[~inl] = (spec.separation + spec.outlier_magnitude) * u

    L = gram_schmidt(rng.standard_normal((spec.p, spec.r)))
    Z = spec.noise * rng.standard_normal((spec.n, spec.p))
    Z -= (Z @ L) @ L.T
    X = scores @ L.T + Z

    perm = rng.permutation(spec.n)
    return SyntheticData(X[perm], labels[perm], L, centers, scores[perm])


@dataclass
class BankPanel:
    raw_names: list
    raw: np.ndarray             # unscaled variables, NaN for blanks, last column the size
    ids: list
    country: list
    design_names: list
    design: np.ndarray          # outcome and regressors, one row per bank
    truth: SyntheticData


def make_bank_panel(spec: SyntheticSpec, n_countries: int = 8, effect: float = 0.3,
                    seed: int = 0) -> BankPanel:
    """Raw balance-sheet style table plus a regression design for one synthetic panel.

    Standardized variables ``X`` from :func:`generate` are multiplied by a
    lognormal size so that ratio standardization recovers them. Three
    extra columns exercise preparation: a size-proportional duplicate of
    the first variable, a sparse column and a few blank cells. The
    outcome loads on a country regressor, two bank controls, a country
    shift and the dummy of cluster 1 with coefficient ``effect``.
    """
    d = generate(spec)
    rng = np.random.default_rng(seed)
    n, p = d.X.shape
    size = np.exp(rng.normal(7.0, 1.0, n))
    names = [f"v{j + 1:03d}" for j in range(p)] + ["v001_copy", "rare", "assets"]
    raw = np.empty((n, p + 3))
    raw[:, :p] = d.X * size[:, None]
    raw[:, p] = 2.0 * raw[:, 0]
    raw[:, p + 1] = 0.0
    raw[rng.choice(n, max(1, n // 50), replace=False), p + 1] = 1.0
    raw[:, p + 2] = size
    raw[rng.choice(n, 3, replace=False), p - 1] = np.nan

    ids = [f"b{i:04d}" for i in range(n)]
    ctry = rng.integers(0, n_countries, n)
    gdp = rng.normal(0.0, 1.0, n_countries)
    shift = rng.normal(0.0, 0.5, n_countries)
    log_size = np.log(size)
    capital = rng.normal(0.1, 0.03, n)
    ind1 = (d.labels == 1).astype(float)
    y = (1.0 + 0.3 * gdp[ctry] + 0.2 * (log_size - 7.0) - 2.0 * capital + effect * ind1
         + shift[ctry] + rng.normal(0.0, 0.5, n))
    design = np.column_stack([y, gdp[ctry], log_size, capital])
    return BankPanel(names, raw, ids, [f"C{k}" for k in ctry], ["npl", "gdp", "log_size", "capital"],
                     design, d)
