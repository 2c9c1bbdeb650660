"""
Linking cluster membership to an outcome.

Pooled OLS and country fixed effects with country-clustered sandwich
errors, a within-country share instrument for two-stage least squares,
backward stepwise selection on clustered p-values, and variance inflation
factors. The model is

    y = a0 + Z a1 + X b + c * IND + e

with ``Z`` country-level and ``X`` bank-level regressors and ``IND`` the
business-model dummy.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .data_prep import correlation, winsorize

__all__ = [
    "RegressionDesign",
    "RegressionFit",
    "CollinearityError",
    "cluster_covariance",
    "fit_ols",
    "fit_fe",
    "fit_iv",
    "share_instrument",
    "stepwise_backward",
    "vif",
    "winsorize_design",
    "stars",
    "format_table",
]

CONST = "const"


class CollinearityError(ValueError):
    """Design matrix is rank deficient; ``columns`` names the collinear set."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("collinear regressors: " + ", ".join(self.columns))


@dataclass
class RegressionDesign:
    y: np.ndarray
    cluster_id: np.ndarray
    Z: np.ndarray | None = None
    Xb: np.ndarray | None = None
    ind: np.ndarray | None = None
    instrument: np.ndarray | None = None
    intercept: bool = True
    fe: bool = False
    z_names: list = field(default_factory=list)
    x_names: list = field(default_factory=list)
    ind_name: str = "IND"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.y.size
        self.cluster_id = np.asarray(self.cluster_id)
        if self.cluster_id.shape != (n,):
            raise ValueError("cluster_id must have one entry per row")
        for nm in ("Z", "Xb"):
            blk = getattr(self, nm)
            if blk is not None:
                blk = np.asarray(blk, dtype=float)
                blk = blk.reshape(n, -1) if blk.ndim == 1 else blk
                if blk.shape[0] != n:
                    raise ValueError(f"{nm} is not row-aligned with y")
                setattr(self, nm, blk)
        if self.Z is not None and not self.z_names:
            self.z_names = [f"z{j}" for j in range(self.Z.shape[1])]
        if self.Xb is not None and not self.x_names:
            self.x_names = [f"x{j}" for j in range(self.Xb.shape[1])]
        for nm in ("ind", "instrument"):
            v = getattr(self, nm)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.size != n:
                    raise ValueError(f"{nm} is not row-aligned with y")
                setattr(self, nm, v)
        if self.ind is not None and not np.all(np.isin(self.ind, (0.0, 1.0))):
            raise ValueError("ind must be a 0/1 dummy")

    @property
    def n(self) -> int:
        return self.y.size

    def columns(self, with_z: bool = True):
        """Regressor blocks in model order as ``(names, matrix)``, no intercept."""
        names, cols = [], []
        if with_z and self.Z is not None:
            names += list(self.z_names)
            cols.append(self.Z)
        if self.Xb is not None:
            names += list(self.x_names)
            cols.append(self.Xb)
        if self.ind is not None:
            names.append(self.ind_name)
            cols.append(self.ind[:, None])
        M = np.hstack(cols) if cols else np.empty((self.n, 0))
        return names, M


@dataclass
class RegressionFit:
    names: list
    coef: np.ndarray
    cov: np.ndarray
    tstat: np.ndarray
    pvalues: np.ndarray
    r2: float
    n: int
    n_clusters: int
    df: int
    method: str
    retained: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    first_stage_f: float | None = None
    singleton_clusters: list = field(default_factory=list)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def __getitem__(self, name):
        return float(self.coef[self.names.index(name)])


def _cluster_codes(cluster_id):
    _, codes = np.unique(cluster_id, return_inverse=True)
    return codes.ravel()


def _small_sample(correction, G, n, K):
    if correction == "CR0":
        return 1.0
    if correction == "CR1":
        return G / (G - 1) * (n - 1) / (n - K)
    raise ValueError("correction must be 'CR0' or 'CR1'")


def cluster_covariance(bread, scores_matrix, resid, cluster_id, n_params=None,
                       correction: str = "CR1") -> np.ndarray:
    """Sandwich ``B (sum_g S_g' e_g e_g' S_g) B'`` with a small-sample factor.

    ``bread`` is ``(X'X)^-1`` for OLS or ``(Q'W)^-1`` for instrumental
    variables, with ``scores_matrix`` the matching ``X`` or ``Q``.
    """
    codes = _cluster_codes(cluster_id)
    G = int(codes.max()) + 1
    if G < 2:
        raise ValueError("clustered inference needs at least 2 clusters")
    n, k = scores_matrix.shape
    s = np.zeros((G, k))
    np.add.at(s, codes, scores_matrix * resid[:, None])
    meat = s.T @ s
    V = bread @ meat @ bread.T
    V = (V + V.T) / 2
    return V * _small_sample(correction, G, n, k if n_params is None else n_params)


def _check_rank(M, names):
    if M.shape[1] == 0:
        return
    scale = np.linalg.norm(M, axis=0)
    scale[scale == 0] = 1.0
    Ms = M / scale
    u, s, vt = np.linalg.svd(Ms, full_matrices=False)
    tol = s.max() * max(M.shape) * np.finfo(float).eps * 10 if s.size else 0
    null = vt[s <= tol]
    if null.size:
        involved = np.flatnonzero(np.abs(null).max(axis=0) > 1e-8)
        raise CollinearityError([names[j] for j in involved])


def _finish(names, coef, cov, y, resid, codes, method, df_extra=None):
    G = int(codes.max()) + 1
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.nan)
    df = G - 1
    p = 2 * stats.t.sf(np.abs(t), df)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1 - float(resid @ resid) / tss if tss > 0 else math.nan
    return RegressionFit(list(names), coef, cov, t, p, r2, y.size, G, df, method,
                         retained=list(names))


def _ols_core(y, M, names, codes, correction, n_params=None):
    _check_rank(M, names)
    XtX_inv = np.linalg.inv(M.T @ M)
    coef = XtX_inv @ (M.T @ y)
    resid = y - M @ coef
    cov = cluster_covariance(XtX_inv, M, resid, codes, n_params, correction)
    return coef, cov, resid


def _with_const(design, names, M):
    if design.intercept:
        return [CONST] + names, np.hstack([np.ones((design.n, 1)), M])
    return names, M


def fit_ols(design: RegressionDesign, correction: str = "CR1") -> RegressionFit:
    """Pooled least squares with country-clustered covariance."""
    codes = _cluster_codes(design.cluster_id)
    names, M = _with_const(design, *design.columns())
    coef, cov, resid = _ols_core(design.y, M, names, codes, correction)
    return _finish(names, coef, cov, design.y, resid, codes, "ols")


def _demean(A, codes, G):
    A = np.asarray(A, dtype=float)
    two_d = A.ndim == 2
    A2 = A if two_d else A[:, None]
    sums = np.zeros((G, A2.shape[1]))
    np.add.at(sums, codes, A2)
    counts = np.bincount(codes, minlength=G)[:, None]
    out = A2 - (sums / counts)[codes]
    return out if two_d else out[:, 0]


def _singletons(design, codes):
    counts = np.bincount(codes)
    labels = np.unique(design.cluster_id)
    return [labels[g].item() if hasattr(labels[g], "item") else labels[g]
            for g in np.flatnonzero(counts == 1)]


def fit_fe(design: RegressionDesign, method: str = "demean",
           correction: str = "CR1") -> RegressionFit:
    """Country fixed effects; country-level regressors are absorbed.

    ``method="demean"`` uses the within transformation, ``"dummies"`` an
    explicit country dummy per cluster. Slopes, residuals and covariance
    agree between the two; the parameter count of the small-sample factor
    includes the country intercepts in both.
    """
    codes = _cluster_codes(design.cluster_id)
    G = int(codes.max()) + 1
    names, M = design.columns(with_z=False)
    K = len(names) + G
    if method == "demean":
        y = _demean(design.y, codes, G)
        Md = _demean(M, codes, G)
        coef, cov, resid = _ols_core(y, Md, names, codes, correction, n_params=K)
    elif method == "dummies":
        D = np.zeros((design.n, G))
        D[np.arange(design.n), codes] = 1.0
        labels = [f"fe[{g}]" for g in np.unique(design.cluster_id)]
        full, fcov, resid = _ols_core(design.y, np.hstack([M, D]), names + labels, codes,
                                      correction, n_params=K)
        coef, cov = full[:len(names)], fcov[:len(names), :len(names)]
    else:
        raise ValueError("method must be 'demean' or 'dummies'")
    fit = _finish(names, coef, cov, design.y, resid, codes, "fe")
    fit.singleton_clusters = _singletons(design, codes)
    if fit.singleton_clusters:
        warnings.warn(f"countries with one observation are fitted exactly: {fit.singleton_clusters}",
                      RuntimeWarning, stacklevel=2)
    return fit


def share_instrument(membership, country_id, model: int) -> np.ndarray:
    """Within-country share of non-outlier rows assigned to cluster ``model``.

    Every row, outliers included, receives its country's share.
    """
    labels = np.asarray(getattr(membership, "labels", membership))
    country_id = np.asarray(country_id)
    if labels.shape != country_id.shape:
        raise ValueError("membership and country ids must be row-aligned")
    codes = _cluster_codes(country_id)
    G = int(codes.max()) + 1
    active = labels >= 0
    den = np.bincount(codes[active], minlength=G).astype(float)
    num = np.bincount(codes[active & (labels == model)], minlength=G).astype(float)
    empty = np.flatnonzero(den == 0)
    if empty.size:
        bad = np.unique(country_id)[empty[0]]
        raise ValueError(f"country {bad!r} has no non-outlier rows")
    return (num / den)[codes]


def fit_iv(design: RegressionDesign, correction: str = "CR1",
           warn_f: float = 10.0) -> RegressionFit:
    """Just-identified two-stage least squares instrumenting ``ind``.

    The instrument replaces the dummy in the instrument set, so
    ``theta = (Q'W)^-1 Q'y``. Residuals use the observed dummy. The
    first-stage F is the squared clustered t-statistic of the instrument.
    """
    if design.instrument is None:
        raise ValueError("instrumental-variable fit needs an instrument")
    if design.ind is None:
        raise ValueError("instrumental-variable fit needs the endogenous dummy")
    codes = _cluster_codes(design.cluster_id)
    G = int(codes.max()) + 1
    names, W = design.columns(with_z=not design.fe)
    Q = W.copy()
    Q[:, -1] = design.instrument
    y = design.y
    if design.fe:
        y, W, Q = _demean(y, codes, G), _demean(W, codes, G), _demean(Q, codes, G)
        K = len(names) + G
    else:
        names, W = _with_const(design, names, W)
        Q = np.hstack([np.ones((design.n, 1)), Q]) if design.intercept else Q
        K = len(names)
    _check_rank(W, names)
    _check_rank(Q, names[:-1] + ["instrument"])

    # first stage: the dummy on the full instrument set
    g_coef, g_cov, _ = _ols_core(W[:, -1], Q, names[:-1] + ["instrument"], codes, correction,
                                 n_params=K)
    first_f = float(g_coef[-1] ** 2 / g_cov[-1, -1]) if g_cov[-1, -1] > 0 else math.inf
    if first_f < warn_f:
        warnings.warn(f"weak instrument: first-stage F = {first_f:.3g} < {warn_f}",
                      RuntimeWarning, stacklevel=2)

    QtW_inv = np.linalg.inv(Q.T @ W)
    coef = QtW_inv @ (Q.T @ y)
    resid = y - W @ coef
    cov = cluster_covariance(QtW_inv, Q, resid, codes, K, correction)
    fit = _finish(names, coef, cov, y if not design.fe else design.y, resid, codes, "iv")
    fit.first_stage_f = first_f
    return fit


def _subset(design: RegressionDesign, keep: list) -> RegressionDesign:
    zi = [j for j, nm in enumerate(design.z_names) if nm in keep]
    xi = [j for j, nm in enumerate(design.x_names) if nm in keep]
    return replace(
        design,
        Z=design.Z[:, zi] if design.Z is not None and zi else None,
        z_names=[design.z_names[j] for j in zi],
        Xb=design.Xb[:, xi] if design.Xb is not None and xi else None,
        x_names=[design.x_names[j] for j in xi],
        ind=design.ind if design.ind_name in keep else None,
    )


def stepwise_backward(design: RegressionDesign, p_remove: float = 0.20, p_add: float = 0.10,
                      method: str = "ols", correction: str = "CR1", protected=(CONST,),
                      max_cycles: int = 2) -> RegressionFit:
    """Backward elimination on clustered p-values with re-entry checks.

    Each step removes the term with the largest p-value above ``p_remove``
    (first in model order on ties), then re-adds excluded terms one at a
    time while the best of them has a p-value below ``p_add``. A term
    re-added more than ``max_cycles`` times is frozen out.
    """
    if not 0 < p_add <= p_remove < 1:
        raise ValueError("need 0 < p_add <= p_remove < 1")
    fitter = {"ols": fit_ols, "fe": lambda d, correction: fit_fe(d, correction=correction)}[method]
    order, _ = design.columns(with_z=method != "fe")
    active, excluded, frozen = list(order), [], set()
    readded: dict = {}

    def fit_on(terms):
        keep = [t for t in order if t in terms]
        return fitter(_subset(design, keep), correction=correction)

    fit = fit_on(active)
    while True:
        cand = [(p, -k, nm) for k, (nm, p) in enumerate(zip(fit.names, fit.pvalues))
                if nm not in protected and p > p_remove]
        if not cand:
            break
        nm = max(cand)[2]
        active.remove(nm)
        excluded.append(nm)
        fit = fit_on(active)
        while True:
            best = None
            for term in [t for t in order if t in excluded and t not in frozen and t != nm]:
                trial = fit_on(active + [term])
                p = trial.pvalues[trial.names.index(term)]
                if p < p_add and (best is None or p < best[0]):
                    best = (p, term, trial)
            if best is None:
                break
            _, term, trial = best
            readded[term] = readded.get(term, 0) + 1
            if readded[term] > max_cycles:
                frozen.add(term)
                warnings.warn(f"stepwise oscillation on {term!r}; frozen out", RuntimeWarning,
                              stacklevel=2)
                continue
            excluded.remove(term)
            active.append(term)
            fit = trial
    fit.method = "stepwise"
    fit.retained = [t for t in fit.names]
    fit.dropped = [t for t in order if t not in active]
    return fit


def vif(design_or_matrix) -> np.ndarray:
    """Variance inflation factors of the non-intercept regressors.

    Computed as the diagonal of the inverse correlation matrix, which
    equals ``1 / (1 - R^2_j)`` from auxiliary regressions with intercept.
    Perfectly collinear columns get ``inf``.
    """
    if isinstance(design_or_matrix, RegressionDesign):
        _, M = design_or_matrix.columns()
    else:
        M = np.asarray(design_or_matrix, dtype=float)
    if M.ndim != 2 or M.shape[1] < 2:
        raise ValueError("VIF needs at least 2 regressors")
    R = correlation(M)
    ev = np.linalg.eigvalsh(R)
    if ev[0] > 1e-10 * ev[-1]:
        return np.diag(np.linalg.inv(R)).copy()
    out = np.empty(M.shape[1])
    for j in range(M.shape[1]):
        others = np.hstack([np.ones((M.shape[0], 1)), np.delete(M, j, axis=1)])
        beta, *_ = np.linalg.lstsq(others, M[:, j], rcond=None)
        e = M[:, j] - others @ beta
        tss = ((M[:, j] - M[:, j].mean()) ** 2).sum()
        ssr = e @ e
        out[j] = math.inf if tss == 0 or ssr <= 1e-10 * tss else tss / ssr
    return out


def winsorize_design(design: RegressionDesign, level: float = 0.05) -> RegressionDesign:
    """Winsorize the outcome and continuous regressors; dummies and the instrument are left alone."""
    def cols(A):
        return None if A is None else np.column_stack([winsorize(A[:, j], level)
                                                        for j in range(A.shape[1])])
    return replace(design, y=winsorize(design.y, level), Z=cols(design.Z), Xb=cols(design.Xb))


def stars(p: float) -> str:
    if not p == p:
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""


def _num(v, digits=3):
    return f"{v:.{digits}f}" if np.isfinite(v) else "NA"


def format_table(fits, titles=None) -> str:
    """Side-by-side text table: coefficient with stars, t-statistic below in parentheses."""
    fits = list(fits)
    titles = list(titles) if titles is not None else [f"({k + 1})" for k in range(len(fits))]
    terms = []
    for f in fits:
        terms += [t for t in f.names if t not in terms]
    cells = [[""] + titles]
    for term in terms:
        row, trow = [term], [""]
        for f in fits:
            if term in f.names:
                k = f.names.index(term)
                row.append(_num(f.coef[k]) + stars(f.pvalues[k]))
                trow.append("(" + _num(f.tstat[k], 2) + ")")
            else:
                row.append("")
                trow.append("")
        cells += [row, trow]
    cells.append(["method"] + [f.method for f in fits])
    cells.append(["n"] + [str(f.n) for f in fits])
    cells.append(["R2"] + [_num(f.r2) for f in fits])
    widths = [max(len(r[k]) for r in cells) for k in range(len(cells[0]))]
    lines = ["  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(r, widths)))
             .rstrip() for r in cells]
    lines.append("t-statistics in parentheses; * p<0.10, ** p<0.05, *** p<0.01")
    return "\n".join(lines) + "\n"
