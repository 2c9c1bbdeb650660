"""Regenerate the packaged example panel, the regression golden table and
the centroid fixture of a frozen-seed clustering run.

    python3 tools/make_example_data.py
"""
import csv
import os
import sys
import tempfile

from tfkm.cli import fmt, main
from tfkm.synthetic import SyntheticSpec, make_bank_panel

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "src", "tfkm", "data")
GOLDEN = os.path.join(HERE, "..", "tests", "data")

# latent scale kept below the variance of the size column (assets / max) so the
# search is not drawn to it; ratios match the default generator
EXAMPLE_SPEC = SyntheticSpec(n=160, p=40, c=4, r=2, separation=0.1, spread=0.01, noise=1.0,
                             outlier_fraction=0.1, outlier_magnitude=0.06, seed=11)


def write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def blank(v):
    return "" if v != v else v


def build(data_dir=DATA):
    panel = make_bank_panel(EXAMPLE_SPEC, seed=5)
    write(os.path.join(data_dir, "banks.csv"), ["id"] + panel.raw_names,
          [[i] + [blank(v) for v in row] for i, row in zip(panel.ids, panel.raw)])
    write(os.path.join(data_dir, "design.csv"), ["id", "country"] + panel.design_names,
          [[i, k] + list(row) for i, k, row in zip(panel.ids, panel.country, panel.design)])
    write(os.path.join(data_dir, "truth.csv"), ["id", "cluster", "t"],
          [[i, "OUTLIER" if lab < 0 else int(lab), 0.0] for i, lab in zip(panel.ids, panel.truth.labels)])
    return panel


if __name__ == "__main__":
    build()
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["regress", "--config", os.path.join(DATA, "example.ini"),
                     "--assignments", os.path.join(DATA, "truth.csv"), "--output", tmp,
                     "--methods", "ols,fe,iv"])
        if code:
            sys.exit(code)
        with open(os.path.join(tmp, "tables.txt"), encoding="utf-8") as src, \
                open(os.path.join(GOLDEN, "golden_tables.txt"), "w", encoding="utf-8") as dst:
            dst.write(src.read())
        cfg = os.path.join(DATA, "example.ini")
        for cmd in ("prep", "cluster"):
            code = main([cmd, "--config", cfg, "--output", tmp])
            if code:
                sys.exit(code)
        with open(os.path.join(tmp, "centroids.csv"), encoding="utf-8") as src, \
                open(os.path.join(GOLDEN, "centroids_fixture.csv"), "w", encoding="utf-8") as dst:
            dst.write(src.read())
