"""
Input preparation: ingestion, ratio standardization, winsorization and
importance-based pruning of near-duplicate variables.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RawMatrix",
    "StandardizedMatrix",
    "VariableCatalog",
    "load_matrix",
    "standardize",
    "correlation",
    "importance",
    "importance_scores",
    "prune_correlated",
    "winsorize",
]


@dataclass
class RawMatrix:
    entity_ids: list[str]
    variable_names: list[str]
    values: np.ndarray  # NaN marks a missing cell

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n, p = self.values.shape
        if len(self.entity_ids) != n or len(self.variable_names) != p:
            raise ValueError("ids/names do not match the value matrix shape")
        if len(set(self.entity_ids)) != n:
            raise ValueError("duplicate id")
        if len(set(self.variable_names)) != p:
            raise ValueError("duplicate variable name")
        if n < 2:
            raise ValueError("need at least 2 rows")

    @property
    def missing(self) -> list[tuple[int, int]]:
        """(row, column) positions of missing cells."""
        return [tuple(ix) for ix in np.argwhere(np.isnan(self.values)).tolist()]


@dataclass
class StandardizedMatrix:
    entity_ids: list[str]
    variable_names: list[str]
    values: np.ndarray
    scale_column_name: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("standardized matrix must be finite and fully populated")

    @property
    def shape(self):
        return self.values.shape

    def select(self, names) -> StandardizedMatrix:
        idx = [self.variable_names.index(nm) for nm in names]
        scale = self.scale_column_name if self.scale_column_name in names else None
        return StandardizedMatrix(list(self.entity_ids), list(names),
                                  self.values[:, idx].copy(), scale)


@dataclass
class VariableCatalog:
    retained: list[tuple[str, float]] = field(default_factory=list)
    # reason is "sparse" or "duplicate-of:<name>"
    dropped: list[tuple[str, str]] = field(default_factory=list)
    threshold: float = 1.0

    def rows(self):
        """Flat report rows: (name, importance, status, duplicate_of)."""
        out = [(nm, imp, "retained", "") for nm, imp in self.retained]
        for nm, reason in self.dropped:
            if reason.startswith("duplicate-of:"):
                out.append((nm, math.nan, "duplicate", reason.split(":", 1)[1]))
            else:
                out.append((nm, math.nan, reason, ""))
        return out


def load_matrix(path, id_column: str) -> RawMatrix:
    """Read a comma-separated numeric table with a header row.

    Blank cells become NaN; any other non-numeric cell outside the id
    column raises ``ValueError``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if id_column not in header:
            raise ValueError(f"{path}: id column {id_column!r} not found")
        id_pos = header.index(id_column)
        names = [h for k, h in enumerate(header) if k != id_pos]
        ids, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            ids.append(rec[id_pos].strip())
            row = []
            for k, cell in enumerate(rec):
                if k == id_pos:
                    continue
                cell = cell.strip()
                if cell == "":
                    row.append(math.nan)
                    continue
                try:
                    row.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric cell {cell!r} in column {header[k]!r}") from None
            rows.append(row)
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"{path}: duplicate id {dup[0]!r}")
    values = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return RawMatrix(ids, names, values)


def standardize(raw: RawMatrix, scale_column: str, sparsity_floor: float = 0.05,
                missing: str = "zero"):
    """Express every variable as a ratio to the scale column.

    The scale column itself is divided by its sample maximum, so it stays
    in the data as a relative size variable. Columns that are nonzero and
    observed in fewer than ``sparsity_floor`` of the rows are dropped.
    Remaining missing cells become 0 (``missing="zero"``) or remove their
    row (``missing="drop"``).

    Returns ``(StandardizedMatrix, VariableCatalog)``; the catalog lists
    only the sparse drops, pruning fills in the rest.
    """
    if scale_column not in raw.variable_names:
        raise ValueError(f"scale column {scale_column!r} not found")
    if missing not in ("zero", "drop"):
        raise ValueError("missing must be 'zero' or 'drop'")
    js = raw.variable_names.index(scale_column)
    scale = raw.values[:, js]
    if np.any(np.isnan(scale)):
        bad = [raw.entity_ids[i] for i in np.flatnonzero(np.isnan(scale))]
        raise ValueError(f"missing scale value for {bad[0]!r}")
    if np.any(scale <= 0):
        bad = [raw.entity_ids[i] for i in np.flatnonzero(scale <= 0)]
        raise ValueError(f"scale value <= 0 for {bad[0]!r}")

    vals = raw.values
    n = vals.shape[0]
    populated = (~np.isnan(vals)) & (vals != 0)
    share = populated.sum(axis=0) / n
    keep, dropped = [], []
    for j, nm in enumerate(raw.variable_names):
        if j != js and share[j] < sparsity_floor:
            dropped.append((nm, "sparse"))
        else:
            keep.append(j)

    out = vals[:, keep] / scale[:, None]
    out[:, keep.index(js)] = scale / scale.max()
    ids = list(raw.entity_ids)
    if missing == "zero":
        out = np.where(np.isnan(out), 0.0, out)
    else:
        rows = ~np.any(np.isnan(out), axis=1)
        out = out[rows]
        ids = [i for i, k in zip(ids, rows) if k]
    names = [raw.variable_names[j] for j in keep]
    return (StandardizedMatrix(ids, names, out, scale_column),
            VariableCatalog(retained=[], dropped=dropped))


def correlation(values) -> np.ndarray:
    """Sample correlation of the columns; constant columns get 0 off-diagonal."""
    values = np.asarray(values, dtype=float)
    xc = values - values.mean(axis=0)
    sd = np.sqrt(np.einsum("ij,ij->j", xc, xc))
    ok = sd > 0
    z = np.zeros_like(xc)
    z[:, ok] = xc[:, ok] / sd[ok]
    corr = z.T @ z
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def importance(corr, j: int) -> float:
    """Sum of absolute correlations of variable ``j`` with all others."""
    row = np.abs(np.asarray(corr, dtype=float)[j])
    return float(row.sum() - row[j])


def importance_scores(corr) -> np.ndarray:
    a = np.abs(np.asarray(corr, dtype=float))
    return a.sum(axis=1) - np.diag(a)


def prune_correlated(X: StandardizedMatrix, threshold: float = 0.95,
                     catalog: VariableCatalog | None = None):
    """Greedy importance-ordered removal of near-duplicate variables.

    Variables are visited in non-increasing importance (stable on the
    original column order, with importances equal to 12 decimals counted
    as ties so that exact duplicates keep their column order). A candidate whose absolute correlation with an
    already retained variable exceeds ``threshold`` is dropped as a
    duplicate of the most correlated retained one.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    p = len(X.variable_names)
    if p < 2:
        raise ValueError("need at least 2 variables to prune")
    corr = correlation(X.values)
    imp = importance_scores(corr)
    order = np.argsort(-np.round(imp, 12), kind="stable")
    kept: list[int] = []
    dropped = list(catalog.dropped) if catalog is not None else []
    for j in order:
        if kept:
            c = np.abs(corr[j, kept])
            k = int(np.argmax(c))
            if c[k] > threshold:
                dropped.append((X.variable_names[j], f"duplicate-of:{X.variable_names[kept[k]]}"))
                continue
        kept.append(int(j))
    kept_cols = sorted(kept)
    names = [X.variable_names[j] for j in kept_cols]
    out = X.select(names)
    sub = np.abs(corr[np.ix_(kept_cols, kept_cols)])
    np.fill_diagonal(sub, 0.0)
    assert sub.size == 0 or sub.max() <= threshold
    cat = VariableCatalog(retained=[(X.variable_names[j], float(imp[j])) for j in order if j in kept],
                          dropped=dropped, threshold=threshold)
    return out, cat


def winsorize(column, level: float):
    """Clamp both tails at the ``level`` and ``1 - level`` quantiles.

    Quantiles use linear interpolation between order statistics
    (``numpy.quantile`` default). NaNs pass through untouched.
    """
    x = np.asarray(column, dtype=float)
    if x.size == 0:
        raise ValueError("cannot winsorize an empty vector")
    if not 0 <= level < 0.5:
        raise ValueError("level must lie in [0, 0.5)")
    if level == 0:
        return x.copy()
    obs = x[~np.isnan(x)]
    if obs.size == 0:
        return x.copy()
    lo, hi = np.quantile(obs, [level, 1 - level])
    return np.where(np.isnan(x), x, np.clip(x, lo, hi))
