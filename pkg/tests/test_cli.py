import csv
import filecmp
import os
from importlib import resources

import numpy as np
import pytest

from tfkm.cli import fmt, load_config, main

DATA = str(resources.files("tfkm") / "data")
CONFIG = os.path.join(DATA, "example.ini")
HERE = os.path.dirname(os.path.abspath(__file__))


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    out = tmp_path_factory.mktemp("prep")
    assert run_cli("prep", "--config", CONFIG, "--output", out) == 0
    return out


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(3) == "3" and fmt(True) == "true" and fmt(None) == ""
    assert fmt(float("nan")) == "NA" and fmt(float("inf")) == "inf"


def test_prep_writes_outputs(prepared):
    assert (prepared / "standardized.csv").exists()
    cat = {r["variable"]: r for r in rows(prepared / "catalog.csv")}
    assert cat["rare"]["status"] == "sparse"
    assert {cat["v001"]["status"], cat["v001_copy"]["status"]} == {"retained", "duplicate"}
    header = rows(prepared / "standardized.csv")[0].keys()
    assert "assets" in header


def test_prep_deterministic(prepared, tmp_path):
    assert run_cli("prep", "--config", CONFIG, "--output", tmp_path) == 0
    for name in ("standardized.csv", "catalog.csv", "prep_manifest.json"):
        assert filecmp.cmp(prepared / name, tmp_path / name, shallow=False)


def test_prep_missing_scale_column(tmp_path, capsys):
    code = run_cli("prep", "--config", CONFIG, "--output", tmp_path, "--scale_column", "equity")
    assert code == 2
    assert "equity" in capsys.readouterr().err


def test_flag_overrides_file(tmp_path):
    cfg = load_config(CONFIG, "cluster", {"restarts": "7", "output": str(tmp_path)})
    assert cfg["restarts"] == 7 and cfg["c"] == 4 and cfg["seed"] == 20240601


def test_unknown_key_rejected(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[x]\nbogus = 1\n")
    assert run_cli("synth", "--config", bad, "--output", tmp_path) == 2


def test_missing_output_and_bad_values(tmp_path):
    assert run_cli("synth", "--seed", "1") == 2
    assert run_cli("synth", "--seed", "x", "--output", tmp_path) == 2
    assert run_cli("cluster", "--nonsense", "1") == 2


def test_cluster_outputs(prepared, tmp_path):
    out = tmp_path / "c"
    assert run_cli("cluster", "--config", CONFIG, "--matrix", prepared / "standardized.csv",
                   "--output", out, "--restarts", "10") == 0
    assign = rows(out / "assignments.csv")
    assert sum(r["cluster"] == "OUTLIER" for r in assign) == 16
    assert len(rows(out / "scores.csv")) == 160
    assert len(rows(out / "centroids.csv")) == 4
    assert len(rows(out / "loadings.csv")) == len(rows(prepared / "standardized.csv")[0]) - 1


def test_cluster_validation(prepared, tmp_path):
    args = ["cluster", "--config", CONFIG, "--matrix", prepared / "standardized.csv", "--output", tmp_path]
    assert run_cli(*args, "--c", "1") == 2
    assert run_cli("cluster", "--matrix", prepared / "standardized.csv", "--output", tmp_path) == 2
    assert run_cli(*args[:-2], "--output", tmp_path, "--matrix", tmp_path / "none.csv") == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cluster_runtime_failure(tmp_path):
    m = tmp_path / "flat.csv"
    m.write_text("id,a,b,c\n" + "".join(f"r{i},{int(i == 0)},0,0\n" for i in range(6)))
    code = run_cli("cluster", "--matrix", m, "--output", tmp_path, "--seed", "1", "--c", "5",
                   "--r", "1", "--alpha", "0.5", "--restarts", "2")
    assert code == 1


def test_centroid_fixture_replay(prepared, tmp_path):
    assert run_cli("cluster", "--config", CONFIG, "--matrix", prepared / "standardized.csv",
                   "--output", tmp_path) == 0
    got = np.array([[float(r["f1"]), float(r["f2"])] for r in rows(tmp_path / "centroids.csv")])
    ref = np.array([[float(r["f1"]), float(r["f2"])]
                    for r in rows(os.path.join(HERE, "data", "centroids_fixture.csv"))])
    np.testing.assert_allclose(got, ref, atol=1e-12)


@pytest.mark.slow
def test_cluster_full_scale_outlier_count(tmp_path):
    assert run_cli("synth", "--output", tmp_path, "--seed", "3", "--p", "382") == 0
    assert run_cli("cluster", "--matrix", tmp_path / "data.csv", "--output", tmp_path, "--seed", "3",
                   "--c", "4", "--r", "2", "--alpha", "0.1", "--restarts", "100") == 0
    assert sum(r["cluster"] == "OUTLIER" for r in rows(tmp_path / "assignments.csv")) == 36


def test_select_outputs(tmp_path):
    assert run_cli("synth", "--output", tmp_path, "--seed", "4", "--n", "200", "--p", "40") == 0
    assert run_cli("select", "--matrix", tmp_path / "data.csv", "--output", tmp_path, "--seed", "4",
                   "--c_grid", "2-6", "--strategies", "fixed-r-trimmed", "--restarts", "30") == 0
    grid = rows(tmp_path / "selection.csv")
    assert {"W", "W_plain", "H", "H_plain"} <= set(grid[0])
    marked = [r for r in grid if r["selected_plain"] == "true"]
    assert len(marked) == 1 and marked[0]["c"] == "4"


def test_select_singleton(prepared, tmp_path):
    assert run_cli("select", "--config", CONFIG, "--matrix", prepared / "standardized.csv",
                   "--output", tmp_path, "--c_grid", "3", "--strategies", "fixed-r",
                   "--restarts", "3") == 0
    grid = rows(tmp_path / "selection.csv")
    assert len(grid) == 1 and grid[0]["selected_squared"] == "true"


def test_select_rejects_unknown_strategy(prepared, tmp_path):
    assert run_cli("select", "--config", CONFIG, "--matrix", prepared / "standardized.csv",
                   "--output", tmp_path, "--strategies", "best") == 2


def test_regress_fans_out_and_matches_golden(tmp_path):
    assert run_cli("regress", "--config", CONFIG, "--assignments", os.path.join(DATA, "truth.csv"),
                   "--output", tmp_path, "--methods", "ols,fe,iv") == 0
    coefs = rows(tmp_path / "coefficients.csv")
    assert sorted({r["dummy"] for r in coefs}) == ["IND0", "IND1", "IND2", "IND3"]
    assert {(r["dummy"], r["method"]) for r in coefs} == {
        (f"IND{j}", m) for j in range(4) for m in ("ols", "fe", "iv")}
    with open(tmp_path / "tables.txt") as a, open(os.path.join(HERE, "data", "golden_tables.txt")) as b:
        assert a.read() == b.read()


def test_regress_iv_needs_instrument(tmp_path):
    roles = tmp_path / "roles.ini"
    roles.write_text("[roles]\noutcome = npl\ncountry = country\nbank = log_size\ndummy = gdp_pos\n")
    design = tmp_path / "design.csv"
    src = rows(os.path.join(DATA, "design.csv"))
    with open(design, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "country", "npl", "log_size", "gdp_pos"])
        for r in src:
            w.writerow([r["id"], r["country"], r["npl"], r["log_size"], int(float(r["gdp"]) > 0)])
    args = ["regress", "--design", design, "--roles", roles, "--output", tmp_path]
    assert run_cli(*args, "--methods", "ols") == 0
    assert run_cli(*args, "--methods", "iv") == 2


def test_synth_outputs(tmp_path):
    assert run_cli("synth", "--output", tmp_path, "--seed", "5", "--n", "30", "--p", "5",
                   "--outlier_fraction", "0") == 0
    truth = rows(tmp_path / "truth.csv")
    assert len(truth) == 30 and all(r["outlier"] == "false" for r in truth)
    assert len(rows(tmp_path / "data.csv")[0]) == 6
