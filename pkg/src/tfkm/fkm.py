"""
Factorial k-means by alternated least squares, with optional radial trimming.

Minimizes ``||XA - U Ybar||^2`` over a column-orthonormal ``p x r`` loading
matrix ``A``, a hard membership ``U`` and the ``c x r`` centroid matrix
``Ybar``, summing only over rows that are not trimmed. Each iteration runs

    assign -> trim -> update loadings -> update centroids -> evaluate

and an iterate is accepted only if it lowers the objective; otherwise the
previous ``(A, U, Ybar)`` is kept and the restart stops.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .trimming import flag_outliers, radial_scores, trim_count

__all__ = [
    "FkmConfig",
    "Membership",
    "Loadings",
    "FkmSolution",
    "EmptyClusterError",
    "objective",
    "assign_step",
    "update_loadings",
    "centroids",
    "init_loadings",
    "init_membership",
    "gram_schmidt",
    "sign_normalize",
    "restart_rng",
    "derive_seed",
    "run",
]

ORTHO_TOL = 1e-8
TIE_TOL = 1e-9


class EmptyClusterError(RuntimeError):
    """A cluster has no untrimmed member."""


@dataclass(frozen=True)
class FkmConfig:
    c: int
    r: int
    alpha: float = 0.0
    restarts: int = 100
    max_iters: int = 200
    rel_tol: float = 1e-9
    seed: int = 0
    # apply the radial trimming step at all (alpha=0 with trim=True is a no-op trim)
    trim: bool = True
    # mean-center X before the covariance used for initial loadings
    center_init: bool = True
    # random orthogonal rotations instead of permutation matrices
    orthogonal_init: bool = False
    # rows used for the score covariance: "all" or "active" (previously untrimmed)
    cov_scope: str = "all"

    def __post_init__(self):
        if self.c < 2:
            raise ValueError(f"c must be >= 2, got {self.c}")
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if self.r > self.c - 1:
            raise ValueError(f"r must not exceed c - 1 = {self.c - 1}, got {self.r}")
        if not 0 <= self.alpha <= 0.5:
            raise ValueError(f"alpha must lie in [0, 0.5], got {self.alpha}")
        if self.restarts < 1 or self.max_iters < 1:
            raise ValueError("restarts and max_iters must be positive")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.cov_scope not in ("all", "active"):
            raise ValueError("cov_scope must be 'all' or 'active'")


@dataclass
class Membership:
    """Hard cluster labels; ``-1`` marks a trimmed (outlier) row."""

    labels: np.ndarray
    c: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.labels.size and (self.labels.max() >= self.c or self.labels.min() < -1):
            raise ValueError("labels out of range")

    @classmethod
    def from_matrix(cls, U) -> Membership:
        U = np.asarray(U)
        if np.any((U != 0) & (U != 1)) or np.any(U.sum(axis=1) > 1):
            raise ValueError("U rows must be one-hot or all-zero")
        labels = np.where(U.any(axis=1), U.argmax(axis=1), -1)
        return cls(labels, U.shape[1])

    @property
    def U(self) -> np.ndarray:
        U = np.zeros((self.labels.size, self.c))
        act = self.labels >= 0
        U[np.flatnonzero(act), self.labels[act]] = 1.0
        return U

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.labels < 0

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels[self.labels >= 0], minlength=self.c)

    def copy(self) -> Membership:
        return Membership(self.labels.copy(), self.c)


@dataclass
class Loadings:
    A: np.ndarray
    eigenvalues: np.ndarray | None = None
    # the r-th and (r+1)-th eigenvalues tie, so the optimum is not unique
    degenerate: bool = False


@dataclass
class FkmSolution:
    loadings: np.ndarray
    membership: Membership
    centroids: np.ndarray
    scores: np.ndarray
    objective: float
    residual: np.ndarray
    radial: np.ndarray
    iterations: int
    restart_index: int
    restarts: list = field(default_factory=list)

    @property
    def labels(self) -> np.ndarray:
        return self.membership.labels

    @property
    def outliers(self) -> np.ndarray:
        return self.membership.outlier_mask


def _as_array(X) -> np.ndarray:
    return np.asarray(getattr(X, "values", X), dtype=float)


def _as_membership(U, c=None) -> Membership:
    if isinstance(U, Membership):
        return U
    return Membership.from_matrix(U)


def derive_seed(master: int, *key: int) -> int:
    """Deterministic 64-bit seed for a sub-stream identified by ``key``."""
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def restart_rng(seed: int, k: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k, stream)))


def sign_normalize(V: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive."""
    V = np.array(V, dtype=float)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def gram_schmidt(M) -> np.ndarray:
    """Orthonormalize the columns of ``M`` (Gram-Schmidt with reorthogonalization)."""
    M = np.array(M, dtype=float)
    Q = np.zeros_like(M)
    for j in range(M.shape[1]):
        v = M[:, j].copy()
        ref = np.linalg.norm(v)
        for _ in range(2):
            if j:
                v -= Q[:, :j] @ (Q[:, :j].T @ v)
        nrm = np.linalg.norm(v)
        if nrm <= 1e-12 * ref or nrm == 0:
            raise np.linalg.LinAlgError("columns are linearly dependent")
        Q[:, j] = v / nrm
    return Q


def objective(X, A, U, Ybar) -> float:
    """Squared Frobenius norm of ``XA - U Ybar`` over untrimmed rows."""
    X = _as_array(X)
    A = np.asarray(A, dtype=float)
    Ybar = np.asarray(Ybar, dtype=float)
    memb = _as_membership(U)
    if X.shape[1] != A.shape[0] or memb.labels.size != X.shape[0] \
            or Ybar.shape != (memb.c, A.shape[1]):
        raise ValueError("shape mismatch")
    act = memb.labels >= 0
    D = X[act] @ A - Ybar[memb.labels[act]]
    return float(np.einsum("ij,ij->", D, D))


def _sq_dist(F, Y):
    D = F[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", D, D)


def assign_step(F, Ybar) -> Membership:
    """Nearest centroid in the factor space; ties go to the lowest index."""
    F = np.asarray(F, dtype=float)
    Ybar = np.asarray(Ybar, dtype=float)
    if np.isnan(F).any() or np.isnan(Ybar).any():
        raise ValueError("NaN in scores or centroids")
    return Membership(np.argmin(_sq_dist(F, Ybar), axis=1), Ybar.shape[0])


def _group_stats(X, memb):
    act = memb.labels >= 0
    Xa = X[act]
    la = memb.labels[act]
    counts = np.bincount(la, minlength=memb.c)
    if np.any(counts == 0):
        raise EmptyClusterError(f"empty cluster(s) {np.flatnonzero(counts == 0).tolist()}")
    sums = np.zeros((memb.c, X.shape[1]))
    np.add.at(sums, la, Xa)
    return Xa, la, counts, sums / counts[:, None]


def update_loadings(X, U, r: int) -> Loadings:
    """Loadings minimizing the within-cluster scatter of the scores for fixed U.

    These are the eigenvectors of ``X'(P - I)X`` with the largest
    eigenvalues (``P`` the projector onto the cluster indicators, untrimmed
    rows only), i.e. the smallest eigenvectors of the within-cluster
    scatter matrix. When the eigenvalue at the cut is tied (always the case
    for p >= n), the tied eigenspace is resolved by maximal between-cluster
    scatter, which leaves the objective unchanged.
    """
    X = _as_array(X)
    memb = _as_membership(U)
    Xa, la, counts, means = _group_stats(X, memb)
    p = X.shape[1]
    if not 1 <= r <= p:
        raise ValueError("r must lie in [1, p]")
    W = Xa - means[la]
    S = W.T @ W
    w, V = np.linalg.eigh(S)  # ascending: smallest within scatter first
    scale = max(float(np.abs(w).max()), float(np.einsum("ij,ij->", Xa, Xa)) / p, np.finfo(float).tiny)
    tol = TIE_TOL * scale
    degenerate = r < p and (w[r] - w[r - 1]) <= tol
    if degenerate:
        block = np.flatnonzero(np.abs(w - w[r - 1]) <= tol)
        below = np.arange(block[0])
        need = r - below.size
        Nb = V[:, block]
        Bm = (means * np.sqrt(counts)[:, None]) @ Nb
        g, G = np.linalg.eigh(Bm.T @ Bm)
        A = np.hstack([V[:, below], Nb @ G[:, ::-1][:, :need]])
    else:
        A = V[:, :r]
    A = sign_normalize(A)
    err = np.abs(A.T @ A - np.eye(r)).max()
    if err > ORTHO_TOL:
        raise AssertionError(f"loadings lost orthonormality ({err:.2e})")
    return Loadings(A, -w[:r], degenerate)


def centroids(X, A, U) -> np.ndarray:
    """Mean factor score of each cluster over its untrimmed members."""
    X = _as_array(X)
    memb = _as_membership(U)
    F = X @ np.asarray(A, dtype=float)
    act = memb.labels >= 0
    counts = np.bincount(memb.labels[act], minlength=memb.c)
    if np.any(counts == 0):
        raise EmptyClusterError(f"empty cluster(s) {np.flatnonzero(counts == 0).tolist()}")
    sums = np.zeros((memb.c, F.shape[1]))
    np.add.at(sums, memb.labels[act], F[act])
    return sums / counts[:, None]


def sample_covariance(X, center: bool = True) -> np.ndarray:
    X = _as_array(X)
    Xc = X - X.mean(axis=0) if center else X
    return Xc.T @ Xc / (X.shape[0] - 1)


def _rotation(p, rng, orthogonal):
    if orthogonal:
        M = rng.standard_normal((p, p))
    else:
        M = np.eye(p)[rng.permutation(p)]
    return gram_schmidt(M)


def init_loadings(C, K: int, r: int, seed: int = 0, orthogonal: bool = False,
                  rotations=None) -> list[np.ndarray]:
    """Starting loadings ``P_k V_r`` for ``K`` restarts.

    ``V_r`` holds the top-``r`` eigenvectors of the covariance ``C``; ``P_k``
    is a uniformly random permutation matrix (or a random orthogonal matrix
    with ``orthogonal=True``), passed through Gram-Schmidt. Explicit
    ``rotations`` override the random draws.
    """
    C = np.asarray(C, dtype=float)
    p = C.shape[0]
    w, V = np.linalg.eigh(C)
    w, V = w[::-1], V[:, ::-1]
    pos = int(np.sum(w > TIE_TOL * max(w[0], np.finfo(float).tiny)))
    if r > pos:
        warnings.warn(f"r={r} exceeds the {pos} strictly positive covariance eigenvalues",
                      RuntimeWarning, stacklevel=2)
    Vr = sign_normalize(V[:, :r])
    out = []
    for k in range(K):
        if rotations is not None:
            P = np.asarray(rotations[k], dtype=float)
        else:
            P = _rotation(p, restart_rng(seed, k), orthogonal)
        out.append(P @ Vr)
    return out


def _center_scores(F0):
    F0 = np.asarray(F0, dtype=float)
    return radial_scores(F0, Membership(np.zeros(F0.shape[0], dtype=np.intp), 1))


def init_membership(F0, c: int, rng=None) -> Membership:
    """Initial groups from quantiles of the radial scores about the grand mean.

    Each row goes to the nearest of the odd-numbered ``2c``-quantiles
    (probabilities ``(2k - 1) / 2c``) of its score. Degenerate scores
    fall back to uniform random labels.
    """
    F0 = np.asarray(F0, dtype=float)
    n = F0.shape[0]
    if np.all(np.ptp(F0, axis=0) == 0):
        warnings.warn("degenerate initial scores, random initial membership", RuntimeWarning,
                      stacklevel=2)
        rng = rng if rng is not None else np.random.default_rng()
        return Membership(rng.integers(0, c, size=n), c)
    t = _center_scores(F0).t
    q = np.quantile(t, (2 * np.arange(1, c + 1) - 1) / (2 * c))
    return Membership(np.argmin(np.abs(t[:, None] - q[None, :]), axis=1), c)


def _repair(memb, F, Y):
    """Refill each empty cluster with the untrimmed row farthest from its centroid."""
    counts = memb.counts
    if not np.any(counts == 0):
        return memb
    memb = memb.copy()
    act = np.flatnonzero(memb.labels >= 0)
    for j in np.flatnonzero(counts == 0):
        donors = act[counts[memb.labels[act]] >= 2]
        if donors.size == 0:
            raise EmptyClusterError(f"cannot refill empty cluster {j}")
        d = np.einsum("ij,ij->i", F[donors] - Y[memb.labels[donors]],
                      F[donors] - Y[memb.labels[donors]])
        i = donors[int(np.argmax(d))]
        counts[memb.labels[i]] -= 1
        memb.labels[i] = j
        counts[j] += 1
    return memb


def _single_restart(X, A0, cfg: FkmConfig, k: int, atol: float):
    n = X.shape[0]
    A = A0
    F = X @ A
    memb = init_membership(F, cfg.c, restart_rng(cfg.seed, k, 1))
    memb = _repair(memb, F, _safe_means(F, memb))
    Y = centroids(X, A, memb)
    trimming = cfg.trim
    best = None
    prev_obj = np.inf
    active_prev = np.ones(n, dtype=bool)
    history, n_out = [], []
    for _ in range(cfg.max_iters):
        F = X @ A
        cand = assign_step(F, Y)
        if trimming:
            rs = radial_scores(F, cand, cov_rows=None if cfg.cov_scope == "all" else active_prev)
            mask = flag_outliers(rs, cfg.alpha)
            cand.labels[mask] = -1
            t = rs.t
        else:
            t = None
        cand = _repair(cand, F, Y)
        L = update_loadings(X, cand, cfg.r)
        Ynew = centroids(X, L.A, cand)
        obj = objective(X, L.A, cand, Ynew)
        if obj >= prev_obj:
            break
        history.append(obj)
        n_out.append(int(cand.outlier_mask.sum()))
        best = (L.A, cand, Ynew, obj, t)
        A, Y = L.A, Ynew
        active_prev = ~cand.outlier_mask
        converged = np.isfinite(prev_obj) and prev_obj - obj <= cfg.rel_tol * prev_obj + atol
        prev_obj = obj
        if converged:
            break
    return best, history, n_out


def _safe_means(F, memb):
    means = np.zeros((memb.c, F.shape[1]))
    for j in range(memb.c):
        sel = memb.labels == j
        if sel.any():
            means[j] = F[sel].mean(axis=0)
    return means


def run(X, cfg: FkmConfig) -> FkmSolution:
    """Best of ``cfg.restarts`` ALS runs (lowest objective, ties to the first)."""
    X = _as_array(X)
    n, p = X.shape
    if n <= cfg.c:
        raise ValueError(f"need more rows ({n}) than clusters ({cfg.c})")
    if cfg.r > p:
        raise ValueError(f"r={cfg.r} exceeds the number of variables {p}")
    atol = 1e-12 * float(np.einsum("ij,ij->", X, X))
    inits = init_loadings(sample_covariance(X, cfg.center_init), cfg.restarts, cfg.r,
                          cfg.seed, cfg.orthogonal_init)
    best, best_k, logs = None, -1, []
    for k, A0 in enumerate(inits):
        try:
            state, history, n_out = _single_restart(X, A0, cfg, k, atol)
        except EmptyClusterError as exc:
            logs.append({"restart": k, "aborted": True, "reason": str(exc),
                         "iterations": 0, "objective": None, "history": [], "n_outliers": []})
            continue
        logs.append({"restart": k, "aborted": False, "iterations": len(history),
                     "objective": state[3], "history": history, "n_outliers": n_out})
        if best is None or state[3] < best[3]:
            best, best_k = state, k
    if best is None:
        raise RuntimeError("all restarts aborted with empty clusters")
    A, memb, Y, obj, t = best
    F = X @ A
    if t is None:
        t = radial_scores(F, assign_step(F, Y)).t
    resid = F @ A.T - memb.U @ Y @ A.T
    return FkmSolution(loadings=A, membership=memb, centroids=Y, scores=F, objective=obj,
                       residual=resid, radial=t, iterations=logs[best_k]["iterations"],
                       restart_index=best_k, restarts=logs)
