"""Trimmed factorial k-means with model selection and cluster-robust regression."""
__version__ = "0.1.0"

from .data_prep import load_matrix, prune_correlated, standardize, winsorize  # noqa: E402
from .fkm import FkmConfig, FkmSolution, Membership, run  # noqa: E402
from .selection import fit_grid, hartigan, select_alpha, select_clusters, select_rank  # noqa: E402
from .synthetic import SyntheticSpec, generate  # noqa: E402

__all__ = [
    "FkmConfig", "FkmSolution", "Membership", "run",
    "load_matrix", "standardize", "prune_correlated", "winsorize",
    "fit_grid", "hartigan", "select_clusters", "select_rank", "select_alpha",
    "SyntheticSpec", "generate",
]
