"""
Choosing the number of clusters and the subspace rank
=====================================================

Fit a grid of cluster counts, compute Hartigan's statistic between
consecutive fits and keep the smallest c whose statistic drops to 10.
"""
import warnings

from tfkm import SyntheticSpec, fit_grid, generate, select_clusters, select_rank
from tfkm.selection import centroid_singular_values

data = generate(SyntheticSpec(n=365, p=100, outlier_fraction=0.1, seed=7))

# 100 restarts per cell; fewer leaves local optima that break the W curve
grid = fit_grid(data.X, range(2, 8), r=2, alphas=(0.1,), strategies=("fixed-r-trimmed",),
                restarts=100, seed=7)

print(" c        W   W_plain        H   H_plain")
for e in grid.series("fixed-r-trimmed", 0.1):
    h = "%8.2f" % e.H if e.H is not None else "       -"
    hp = "%8.2f" % e.H_plain if e.H_plain is not None else "       -"
    print("%2d %8.3f %9.3f %s %s" % (e.c, e.W, e.W_plain, h, hp))

# squared distances shrink by about a third of a group whenever a compact
# group is split, so H can stay near 10 past the true c; plain distances
# drop more sharply after c=4
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    for variant in ("squared", "plain"):
        print(variant, "distances select c =",
              select_clusters(grid, "fixed-r-trimmed", 0.1, variant=variant))

# rank from the centroid singular values: keep the ones above 5% of the largest
print("rank for singular values 17.3, 3.7, 0.4:", select_rank([17.3, 3.7, 0.4]))
best = [e for e in grid.entries if e.c == 4][0]
print("c=4 centroid singular values", [round(s, 3) for s in best.singular_values])
