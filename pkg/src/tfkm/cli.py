"""
Command-line pipeline: ``tfkm {prep,cluster,select,regress,synth}``.

Settings come from an INI file (``--config``) whose keys form one flat
namespace across sections; any key can be overridden by a flag of the same
name (``--restarts 50``). Exit codes: 0 success, 1 runtime failure,
2 invalid configuration or input.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .data_prep import load_matrix, prune_correlated, standardize
from .fkm import FkmConfig, Membership, run
from .regression import (RegressionDesign, fit_fe, fit_iv, fit_ols, format_table,
                         share_instrument, stepwise_backward, vif, winsorize_design)
from .selection import STRATEGIES, fit_grid, select_clusters, select_rank
from .synthetic import SyntheticSpec, generate

# key -> (type, default); None default with required=True is checked per command
KEYS = {
    # data preparation
    "input": (str, None),
    "id_column": (str, "id"),
    "scale_column": (str, None),
    "sparsity_floor": (float, 0.05),
    "missing": (str, "zero"),
    "prune_threshold": (float, 0.95),
    "output": (str, None),
    "matrix": (str, None),
    # clustering
    "seed": (int, None),
    "c": (int, 4),
    "r": (int, 2),
    "alpha": (float, 0.1),
    "restarts": (int, 100),
    "max_iters": (int, 200),
    "rel_tol": (float, 1e-9),
    "trim": (bool, True),
    "orthogonal_init": (bool, False),
    "cov_scope": (str, "all"),
    # selection
    "c_grid": (str, "2-8"),
    "alpha_grid": (str, "0.1"),
    "strategies": (str, ",".join(STRATEGIES)),
    "threshold": (float, 10.0),
    "rank_threshold": (float, 0.05),
    # regression
    "design": (str, None),
    "roles": (str, None),
    "assignments": (str, None),
    "winsor": (float, 0.05),
    "correction": (str, "CR1"),
    "methods": (str, "ols,fe"),
    "p_remove": (float, 0.20),
    "p_add": (float, 0.10),
    "warn_f": (float, 10.0),
    # synthetic data
    "n": (int, 365),
    "p": (int, 100),
    "weights": (str, ""),
    "separation": (float, 0.5),
    "spread": (float, 0.05),
    "noise": (float, 5.0),
    "outlier_fraction": (float, 0.1),
    "outlier_magnitude": (float, 0.3),
}

COMMAND_KEYS = {
    "prep": ["input", "id_column", "scale_column", "sparsity_floor", "missing",
             "prune_threshold", "output"],
    "cluster": ["matrix", "id_column", "output", "seed", "c", "r", "alpha", "restarts",
                "max_iters", "rel_tol", "trim", "orthogonal_init", "cov_scope"],
    "select": ["matrix", "id_column", "output", "seed", "r", "restarts", "max_iters", "rel_tol",
               "cov_scope", "c_grid", "alpha_grid", "strategies", "threshold", "rank_threshold"],
    "regress": ["design", "roles", "assignments", "id_column", "output", "winsor", "correction",
                "methods", "p_remove", "p_add", "warn_f"],
    "synth": ["output", "seed", "n", "p", "c", "r", "weights", "separation", "spread", "noise",
              "outlier_fraction", "outlier_magnitude"],
}


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {s!r}")


def _convert(key, raw):
    typ = KEYS[key][0]
    try:
        return _parse_bool(raw) if typ is bool else typ(str(raw).strip())
    except ValueError:
        raise ValidationError(f"invalid value for {key}: {raw!r}") from None


def load_config(path, command, overrides):
    """Merge defaults, the INI file and flag overrides for one command."""
    values = {}
    base = os.getcwd()
    if path:
        if not os.path.isfile(path):
            raise ValidationError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None)
        cp.read(path, encoding="utf-8")
        base = os.path.dirname(os.path.abspath(path))
        seen = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if key not in KEYS:
                    raise ValidationError(f"unknown config key {key!r} in [{sec}]")
                if key in seen and seen[key] != sec:
                    raise ValidationError(f"key {key!r} set in both [{seen[key]}] and [{sec}]")
                seen[key] = sec
                values[key] = _convert(key, raw)
    for key, raw in overrides.items():
        if raw is not None:
            values[key] = _convert(key, raw)
    cfg = {k: values.get(k, KEYS[k][1]) for k in COMMAND_KEYS[command]}
    # relative paths in the file resolve against the file's directory
    for k in ("input", "output", "matrix", "design", "roles", "assignments"):
        if cfg.get(k) and overrides.get(k) is None and path and not os.path.isabs(cfg[k]):
            cfg[k] = os.path.normpath(os.path.join(base, cfg[k]))
    if cfg.get("output") is None:
        raise ValidationError("output directory is required")
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise ValidationError(f"missing required setting {k!r}")


def _require_file(cfg, key):
    _require(cfg, key)
    if not os.path.isfile(cfg[key]):
        raise ValidationError(f"{key} file not found: {cfg[key]}")


def _int_list(spec):
    out = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out += list(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValidationError(f"empty integer list {spec!r}")
    return out


def _float_list(spec):
    try:
        out = [float(s) for s in str(spec).split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"invalid number list {spec!r}") from None
    if not out:
        raise ValidationError(f"empty number list {spec!r}")
    return out


# ---------------------------------------------------------------- output

def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "NA"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _manifest(command, cfg, **extra):
    out = {"command": command, "version": __version__,
           "config": {k: v for k, v in cfg.items() if k != "output"}}
    # paths are echoed by name only so that the tree does not depend on its location
    for k in ("input", "matrix", "design", "roles", "assignments"):
        if out["config"].get(k):
            out["config"][k] = os.path.basename(out["config"][k])
    out.update(extra)
    return out


def _matrix_path(cfg):
    path = cfg.get("matrix") or os.path.join(cfg["output"], "standardized.csv")
    if not os.path.isfile(path):
        raise ValidationError(f"matrix file not found: {path}")
    return path


def _read_matrix(cfg):
    raw = load_matrix(_matrix_path(cfg), cfg["id_column"])
    if np.isnan(raw.values).any():
        raise ValidationError("clustering input has missing cells; run prep first")
    return raw


# ---------------------------------------------------------------- commands

def cmd_prep(cfg):
    _require_file(cfg, "input")
    _require(cfg, "scale_column")
    raw = load_matrix(cfg["input"], cfg["id_column"])
    X, cat = standardize(raw, cfg["scale_column"], cfg["sparsity_floor"], cfg["missing"])
    X, cat = prune_correlated(X, cfg["prune_threshold"], cat)
    os.makedirs(cfg["output"], exist_ok=True)
    write_csv(os.path.join(cfg["output"], "standardized.csv"), [cfg["id_column"]] + X.variable_names,
              [[i] + list(row) for i, row in zip(X.entity_ids, X.values)])
    write_csv(os.path.join(cfg["output"], "catalog.csv"),
              ["variable", "importance", "status", "duplicate_of"], cat.rows())
    write_json(os.path.join(cfg["output"], "prep_manifest.json"),
               _manifest("prep", cfg, n=X.shape[0], p=X.shape[1]))
    return 0


def _fkm_config(cfg, **over):
    kw = dict(c=cfg["c"], r=cfg["r"], alpha=cfg["alpha"], restarts=cfg["restarts"],
              max_iters=cfg["max_iters"], rel_tol=cfg["rel_tol"], seed=cfg["seed"],
              trim=cfg["trim"], orthogonal_init=cfg["orthogonal_init"], cov_scope=cfg["cov_scope"])
    kw.update(over)
    return FkmConfig(**kw)


def cmd_cluster(cfg):
    _require(cfg, "seed")
    fcfg = _fkm_config(cfg)
    raw = _read_matrix(cfg)
    sol = run(raw.values, fcfg)
    out = cfg["output"]
    os.makedirs(out, exist_ok=True)
    labels = sol.labels
    write_csv(os.path.join(out, "assignments.csv"), [cfg["id_column"], "cluster", "t"],
              [[i, "OUTLIER" if lab < 0 else int(lab), t]
               for i, lab, t in zip(raw.entity_ids, labels, sol.radial)])
    fac = [f"f{k + 1}" for k in range(fcfg.r)]
    write_csv(os.path.join(out, "loadings.csv"), ["variable"] + fac,
              [[nm] + list(row) for nm, row in zip(raw.variable_names, sol.loadings)])
    write_csv(os.path.join(out, "centroids.csv"), ["cluster"] + fac,
              [[j] + list(row) for j, row in enumerate(sol.centroids)])
    write_csv(os.path.join(out, "scores.csv"), [cfg["id_column"], "cluster"] + fac,
              [[i, "OUTLIER" if lab < 0 else int(lab)] + list(row)
               for i, lab, row in zip(raw.entity_ids, labels, sol.scores)])
    write_json(os.path.join(out, "cluster_manifest.json"), _manifest(
        "cluster", cfg, objective=sol.objective, best_restart=sol.restart_index,
        n_outliers=int((labels < 0).sum()),
        restarts=[{"restart": d["restart"], "aborted": d["aborted"], "iterations": d["iterations"],
                   "objective": d["objective"]} for d in sol.restarts]))
    return 0


def cmd_select(cfg):
    _require(cfg, "seed")
    strategies = [s.strip() for s in cfg["strategies"].split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ValidationError(f"unknown strategy {s!r}")
    cs = _int_list(cfg["c_grid"])
    if min(cs) < 2:
        raise ValidationError("c_grid values must be >= 2")
    alphas = _float_list(cfg["alpha_grid"])
    raw = _read_matrix(cfg)
    grid = fit_grid(raw.values, cs, r=cfg["r"], alphas=alphas, strategies=strategies,
                    restarts=cfg["restarts"], seed=cfg["seed"], max_iters=cfg["max_iters"],
                    rel_tol=cfg["rel_tol"], cov_scope=cfg["cov_scope"], threshold=cfg["threshold"])
    lines = sorted({(e.strategy, e.alpha) for e in grid.entries}, key=lambda k: (strategies.index(k[0]), k[1]))
    chosen, summary = {}, []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for strat, a in lines:
            cq = select_clusters(grid, strat, a, variant="squared")
            cp = select_clusters(grid, strat, a, variant="plain")
            chosen[(strat, a)] = (cq, cp)
            full = [e for e in grid.series(strat, a) if e.r == e.c - 1]
            rank = {e.c: select_rank(e.singular_values, cfg["rank_threshold"])
                    for e in full if e.singular_values and e.singular_values[0] > 0}
            summary.append([strat, a, cq, cp, rank.get(cq, "")])
    header, rows = grid.table()
    header = header + ["selected_squared", "selected_plain"]
    rows = [row + [chosen[(row[0], row[3])][0] == row[1], chosen[(row[0], row[3])][1] == row[1]]
            for row in rows]
    os.makedirs(cfg["output"], exist_ok=True)
    write_csv(os.path.join(cfg["output"], "selection.csv"), header, rows)
    write_csv(os.path.join(cfg["output"], "selection_summary.csv"),
              ["strategy", "alpha", "c_squared", "c_plain", "rank_at_c"], summary)
    write_json(os.path.join(cfg["output"], "select_manifest.json"), _manifest(
        "select", cfg, cells=[{"strategy": e.strategy, "c": e.c, "r": e.r, "alpha": e.alpha,
                               "seed": e.seed} for e in grid.entries]))
    return 0


def _read_table(path, id_column):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    if id_column not in rows[0]:
        raise ValidationError(f"{path}: id column {id_column!r} not found")
    return rows


def _read_roles(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path, encoding="utf-8")
    if not cp.has_section("roles"):
        raise ValidationError(f"{path}: missing [roles] section")
    r = cp["roles"]

    def names(key):
        return [s.strip() for s in r.get(key, "").split(",") if s.strip()]
    roles = {"outcome": names("outcome"), "country": r.get("country", "").strip(),
             "bank": names("bank"), "country_level": names("country_level"),
             "dummy": names("dummy"), "instrument": names("instrument")}
    if not roles["outcome"]:
        raise ValidationError(f"{path}: no outcome named")
    if not roles["country"]:
        raise ValidationError(f"{path}: no country column named")
    return roles


def _column(rows, name, path):
    if name not in rows[0]:
        raise ValidationError(f"{path}: column {name!r} not found")
    try:
        return np.array([float(row[name]) for row in rows])
    except ValueError:
        raise ValidationError(f"{path}: non-numeric value in column {name!r}") from None


def cmd_regress(cfg):
    _require_file(cfg, "design")
    _require_file(cfg, "roles")
    methods = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
    for m in methods:
        if m not in ("ols", "fe", "iv", "stepwise"):
            raise ValidationError(f"unknown regression method {m!r}")
    roles = _read_roles(cfg["roles"])
    rows = _read_table(cfg["design"], cfg["id_column"])
    path = cfg["design"]
    ids = [row[cfg["id_column"]] for row in rows]
    country = np.array([row[roles["country"]] for row in rows]) if roles["country"] in rows[0] else None
    if country is None:
        raise ValidationError(f"{path}: country column {roles['country']!r} not found")

    dummies, instruments = {}, {}
    for nm in roles["dummy"]:
        dummies[nm] = _column(rows, nm, path)
    for dnm, inm in zip(roles["dummy"], roles["instrument"]):
        instruments[dnm] = _column(rows, inm, path)
    if cfg.get("assignments"):
        _require_file(cfg, "assignments")
        lab = {}
        for row in _read_table(cfg["assignments"], cfg["id_column"]):
            lab[row[cfg["id_column"]]] = -1 if row["cluster"] == "OUTLIER" else int(row["cluster"])
        missing = [i for i in ids if i not in lab]
        if missing:
            raise ValidationError(f"no cluster assignment for id {missing[0]!r}")
        labels = np.array([lab[i] for i in ids])
        for j in range(int(labels.max()) + 1):
            dummies[f"IND{j}"] = (labels == j).astype(float)
            instruments[f"IND{j}"] = share_instrument(Membership(labels, int(labels.max()) + 1),
                                                      country, j)
    if not dummies:
        raise ValidationError("no business-model dummies: name them in roles or pass assignments")
    if "iv" in methods:
        lacking = [d for d in dummies if d not in instruments]
        if lacking:
            raise ValidationError(f"iv requested but no instrument column for {lacking[0]!r}")

    Z = np.column_stack([_column(rows, nm, path) for nm in roles["country_level"]]) \
        if roles["country_level"] else None
    Xb = np.column_stack([_column(rows, nm, path) for nm in roles["bank"]]) if roles["bank"] else None
    os.makedirs(cfg["output"], exist_ok=True)
    coef_rows, vif_rows, texts = [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for outcome in roles["outcome"]:
            y = _column(rows, outcome, path)
            fits, titles = [], []
            for dnm in dummies:
                base = RegressionDesign(y=y, cluster_id=country, Z=Z, Xb=Xb, ind=dummies[dnm],
                                        instrument=instruments.get(dnm), z_names=roles["country_level"],
                                        x_names=roles["bank"], ind_name=dnm)
                base = winsorize_design(base, cfg["winsor"]) if cfg["winsor"] > 0 else base
                try:
                    v = vif(base)
                    vnames, _ = base.columns()
                    vif_rows += [[outcome, dnm, nm, val] for nm, val in zip(vnames, v)]
                except ValueError:
                    pass
                for m in methods:
                    if m == "ols":
                        f = fit_ols(base, cfg["correction"])
                    elif m == "fe":
                        f = fit_fe(RegressionDesign(**{**base.__dict__, "fe": True}),
                                   correction=cfg["correction"])
                    elif m == "iv":
                        f = fit_iv(base, cfg["correction"], cfg["warn_f"])
                    else:
                        f = stepwise_backward(base, cfg["p_remove"], cfg["p_add"],
                                              correction=cfg["correction"])
                    fits.append(f)
                    titles.append(f"{dnm}:{m}")
                    for k, nm in enumerate(f.names):
                        coef_rows.append([outcome, dnm, m, nm, f.coef[k], f.se[k], f.tstat[k],
                                          f.pvalues[k], f.n, f.r2, f.first_stage_f])
            texts.append(f"outcome: {outcome}\n" + format_table(fits, titles))
    write_csv(os.path.join(cfg["output"], "coefficients.csv"),
              ["outcome", "dummy", "method", "term", "coef", "se", "t", "p", "n", "r2", "first_stage_f"],
              coef_rows)
    write_csv(os.path.join(cfg["output"], "vif.csv"), ["outcome", "dummy", "term", "vif"], vif_rows)
    with open(os.path.join(cfg["output"], "tables.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(texts))
    write_json(os.path.join(cfg["output"], "regress_manifest.json"),
               _manifest("regress", cfg, dummies=list(dummies), methods=methods))
    return 0


def cmd_synth(cfg):
    _require(cfg, "seed")
    weights = tuple(_float_list(cfg["weights"])) if cfg["weights"] else None
    spec = SyntheticSpec(n=cfg["n"], p=cfg["p"], c=cfg["c"], r=cfg["r"], weights=weights,
                         separation=cfg["separation"], spread=cfg["spread"], noise=cfg["noise"],
                         outlier_fraction=cfg["outlier_fraction"],
                         outlier_magnitude=cfg["outlier_magnitude"], seed=cfg["seed"])
    d = generate(spec)
    out = cfg["output"]
    os.makedirs(out, exist_ok=True)
    ids = [f"e{i:04d}" for i in range(spec.n)]
    names = [f"v{j + 1:03d}" for j in range(spec.p)]
    write_csv(os.path.join(out, "data.csv"), ["id"] + names,
              [[i] + list(row) for i, row in zip(ids, d.X)])
    write_csv(os.path.join(out, "truth.csv"), ["id", "cluster", "outlier"],
              [[i, int(lab), lab < 0] for i, lab in zip(ids, d.labels)])
    write_json(os.path.join(out, "synth_manifest.json"), _manifest("synth", cfg))
    return 0


COMMANDS = {"prep": cmd_prep, "cluster": cmd_cluster, "select": cmd_select,
            "regress": cmd_regress, "synth": cmd_synth}


def build_parser():
    ap = argparse.ArgumentParser(prog="tfkm", description="Trimmed factorial k-means pipeline.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, keys in COMMAND_KEYS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI settings file")
        for k in keys:
            sp.add_argument(f"--{k}", dest=k, default=None, metavar=k.upper())
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    overrides = {k: getattr(args, k) for k in COMMAND_KEYS[args.command]}
    try:
        cfg = load_config(args.config, args.command, overrides)
        return COMMANDS[args.command](cfg)
    except ValueError as exc:
        print(f"tfkm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"tfkm {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
