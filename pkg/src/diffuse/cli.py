"""Command-line front end: ``diffuse mc|empirical|diagnose --config FILE``.

Every run writes its outputs plus ``manifest.json`` into ``--out-dir``. The
manifest holds the resolved configuration, the master seed, the SHA-256 of
each output file and an ``errors`` list. Exit status is 0 when every
requested cell or target completed, 1 when some failed (the rest is still
written) and 2 for invalid configuration.
"""
import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _rng, ingest, simulation, spectra, synthetic
from ._parallel import resolve_threads
from .empirical import EmpiricalConfig, frequency_datasets, run_empirical, window_lengths
from .evaluation import SCHEMA_VERSION, dm_shift, reports_to_csv
from .exceptions import DiffuseError, ParameterError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(DiffuseError):
    """The run configuration is invalid."""


def _load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}")
    return doc


def _resolve(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        cfg["reps"] = args.reps
    if "seed" not in cfg:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    try:
        _rng.check_seed(cfg["seed"])
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    cfg["schema_version"] = SCHEMA_VERSION
    if args.config is not None:
        base = Path(args.config).resolve().parent
        cfg["_base_dir"] = str(base)
    return cfg


def _path(cfg, value):
    p = Path(value)
    if not p.is_absolute() and "_base_dir" in cfg:
        p = Path(cfg["_base_dir"]) / p
    if not p.exists():
        raise ConfigError(f"file not found: {value}")
    return p


def _public(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


class _Writer:
    """Single writer for one run directory; records file digests for the manifest."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def text(self, name, content):
        data = content.encode("utf-8")
        (self.dir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def json(self, name, doc):
        self.text(name, json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")

    def manifest(self, command, cfg, errors, extra=None):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "seed": cfg["seed"],
            "config": _public(cfg),
            "files": dict(sorted(self.files.items())),
            "errors": errors,
            "complete": not errors,
        }
        if extra:
            doc.update(extra)
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _clean(x):
    """JSON-safe copy: non-finite floats become null, numpy scalars plain Python."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# -- mc -----------------------------------------------------------------------

MC_CELL_KEYS = ("n", "t", "alpha", "rho")
MC_SHARED_KEYS = ("r", "gamma", "noise_var", "h")


def _mc_cells(cfg):
    if "cells" in cfg:
        cells = [dict(c) for c in cfg["cells"]]
    elif "grid" in cfg:
        g = cfg["grid"]
        sizes = g.get("nt") or [None]
        cells = []
        for alpha in g.get("alpha", [1.0]):
            for rho in g.get("rho", [0.0]):
                if g.get("nt"):
                    pairs = [(v, v) for v in sizes]
                else:
                    pairs = [(n, t) for t in g["t"] for n in g["n"]]
                for n, t in pairs:
                    cells.append({"n": n, "t": t, "alpha": alpha, "rho": rho})
    else:
        raise ConfigError("mc config needs 'cells' or 'grid'")
    if not cells:
        raise ConfigError("no cells requested")
    return cells


def cmd_mc(cfg, out_dir, threads):
    """Monte Carlo cells; writes ``mc_results.csv``, ``mc_grid.csv`` and the manifest."""
    if "reps" not in cfg:
        raise ConfigError("reps is required")
    methods = tuple(cfg.get("methods", simulation.METHODS))
    grids = simulation.Grids(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.get("grids", {}).items()})
    shared = {k: cfg[k] for k in MC_SHARED_KEYS if k in cfg}
    dgps = []
    try:
        for cell in _mc_cells(cfg):
            dgps.append(simulation.DgpConfig(reps=int(cfg["reps"]), master_seed=int(cfg["seed"]), **shared, **cell))
        for dgp in dgps:
            grids.resolve(dgp)
        if set(methods) - set(simulation.METHODS):
            raise ParameterError(f"unknown methods in {methods}")
    except (TypeError, ParameterError) as exc:
        raise ConfigError(str(exc)) from exc
    results, errors = [], []
    for i, dgp in enumerate(dgps):
        try:
            results.append(simulation.run_monte_carlo(dgp, methods, grids, threads))
        except DiffuseError as exc:
            errors.append({"cell": i, "cfg": dgp.to_dict(), "error": str(exc)})
            logger.error("cell %d failed: %s", i, exc)
    summary, grid = simulation.results_to_csv(results)
    w = _Writer(out_dir)
    w.text("mc_results.csv", summary)
    w.text("mc_grid.csv", grid)
    w.manifest("mc", cfg, errors, {"cells": simulation.manifest(results)["cells"]})
    return EXIT_PARTIAL if errors else EXIT_OK


# -- empirical ----------------------------------------------------------------


def _origin_index(ds, value, what):
    if value is None:
        return None
    if isinstance(value, int):
        return value
    try:
        day = _dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{what}: expected a row index or YYYY-MM-DD date") from exc
    for i, d in enumerate(ds.dates):
        if d >= day:
            return i
    raise ConfigError(f"{what} {value} is after the end of the sample")


def _load_monthly(cfg):
    data = cfg.get("data", {"synthetic": True})
    if data.get("synthetic"):
        return synthetic.load_fixture()
    freq = data.get("frequency", ingest.MONTHLY)
    return ingest.parse_fred_csv(_path(cfg, data["path"]), freq)


def _emp_config(cfg, ds, h, lengths, targets=None):
    try:
        return EmpiricalConfig(
            h=h,
            window_lengths=tuple(lengths),
            forecast_start=_origin_index(ds, cfg.get("forecast_start", 0), "forecast_start"),
            eval_start=_origin_index(ds, cfg.get("eval_start", cfg.get("forecast_start", 0)), "eval_start"),
            last_origin=_origin_index(ds, cfg.get("last_origin"), "last_origin"),
            methods=tuple(cfg.get("methods", ("pca", "ridge"))),
            targets=tuple(targets or cfg.get("targets") or ()) or None,
            rp_draws=int(cfg.get("rp_draws", 1000)),
            max_factors=int(cfg.get("max_factors", 50)),
            max_subspace=int(cfg.get("max_subspace", 50)),
            seed=int(cfg["seed"]),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


LOSS_HEADER = ("frequency", "window", "target", "method", "origin", "date", "error", "hyperparameter")


def _loss_rows(result, ds, label):
    rows = []
    for per_window in result.runs:
        for run in per_window:
            for m in result.cfg.methods:
                for tau, err, hp in zip(run.origins, run.errors[m], run.choices[m]):
                    rows.append((label, run.window_len, run.target, m, tau, ds.dates[tau].isoformat(), repr(float(err)), repr(hp)))
    return rows


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _report_doc(result):
    reports = {str(wl): rep.to_dict() for wl, rep in result.reports.items()}
    win = {str(wl): {"pca_vs_ridge": rep.win_rate("pca", "ridge")[0] if "ridge" in rep.methods else None} for wl, rep in result.reports.items()}
    return {"reports": reports, "win_rates": win, "dm_shift": result.shifts, "failures": result.failures}


def cmd_empirical(cfg, out_dir, threads):
    """Rolling-window study over window lengths, or across sampling frequencies."""
    monthly_raw = _load_monthly(cfg)
    mode = cfg.get("mode", "windows")
    w = _Writer(out_dir)
    errors, doc, loss_rows, summary = [], {}, [], []
    if mode == "windows":
        ds, bad = ingest.transform_dataset(monthly_raw)
        n_x = len(ds.names) + 1
        lengths = cfg.get("window_lengths") or window_lengths(n_x, cfg.get("window_multiples", (1 / 3, 1 / 2, 2 / 3, 5 / 6, 1.0, 7 / 6, 4 / 3)))
        ecfg = _emp_config(cfg, ds, int(cfg.get("h", 1)), lengths)
        res = run_empirical(ds, ecfg, threads, groups=ds.group or None)
        doc = {"n_x": n_x, "window_lengths": list(lengths), "log_transform_dropped": bad, **_report_doc(res)}
        loss_rows = _loss_rows(res, ds, ds.frequency)
        summary = list(res.reports.values())
        errors = res.failures
    elif mode == "frequency":
        mapping = ingest.load_mapping(_path(cfg, cfg["mapping"]) if "mapping" in cfg else None)
        if "qd_path" in cfg:
            qd = ingest.parse_fred_csv(_path(cfg, cfg["qd_path"]), ingest.QUARTERLY)
        else:
            qd = ingest.aggregate_to_quarterly(monthly_raw)
        match = ingest.match_md_qd_subset(monthly_raw, qd, mapping)
        if not match.pairs:
            raise ConfigError("no series matched between the monthly and quarterly data")
        monthly, quarterly = frequency_datasets(monthly_raw, match)
        settings = (
            ("monthly", monthly, int(cfg.get("monthly_h", 3)), int(cfg.get("monthly_window", 120))),
            ("quarterly", quarterly, int(cfg.get("quarterly_h", 1)), int(cfg.get("quarterly_window", 40))),
        )
        by_freq = {}
        for label, ds, h, wl in settings:
            sub = dict(cfg)
            for key in ("forecast_start", "eval_start", "last_origin"):
                sub[key] = cfg.get(f"{label}_{key}", cfg.get(key))
            res = run_empirical(ds, _emp_config(sub, ds, h, (wl,), match.names), threads, groups=match.groups)
            by_freq[label] = res
            loss_rows += _loss_rows(res, ds, label)
            summary += list(res.reports.values())
            errors += [dict(e, frequency=label) for e in res.failures]
        doc = {
            "matched": match.names,
            "tcode_overrides": {k: list(v) for k, v in match.overrides.items()},
            "unmatched_monthly": match.unmatched_md,
            "unmatched_quarterly": match.unmatched_qd,
            "frequencies": {k: _report_doc(v) for k, v in by_freq.items()},
        }
        reps = {k: next(iter(v.reports.values()), None) for k, v in by_freq.items()}
        if all(reps.values()):
            common = set(reps["monthly"].variables()) & set(reps["quarterly"].variables())
            doc["dm_shift_monthly_minus_quarterly"] = {
                f"{a}|pca": dm_shift(
                    {v: x for v, x in reps["monthly"].dm_pair(a, "pca").items() if v in common},
                    {v: x for v, x in reps["quarterly"].dm_pair(a, "pca").items() if v in common},
                    match.groups,
                )
                for a in ("ridge", "rp")
                if a in reps["monthly"].methods
            }
    else:
        raise ConfigError(f"unknown empirical mode {mode!r}")
    w.json("empirical_report.json", _clean({"seed": cfg["seed"], "config": _public(cfg), **doc}))
    w.text("empirical_losses.csv", _csv(LOSS_HEADER, loss_rows))
    w.text("empirical_summary.csv", reports_to_csv(summary))
    w.manifest("empirical", cfg, _clean(errors))
    return EXIT_PARTIAL if errors else EXIT_OK


# -- diagnose -----------------------------------------------------------------


def diagnose_instance(cfg):
    """Panel ``Z = U diag(spectrum) V'`` with Haar-random orthonormal ``U``, ``V``."""
    spectrum = np.asarray(cfg["spectrum"], dtype=float)
    m = spectrum.size
    t = int(cfg.get("t", m))
    n = int(cfg.get("n", m))
    if m != min(t, n) or np.any(spectrum <= 0) or np.any(np.diff(spectrum) > 0):
        raise ConfigError("spectrum must hold min(t, n) positive, non-increasing singular values")
    rng = _rng.stream(cfg["seed"], 0)
    u = np.linalg.qr(rng.standard_normal((t, m)))[0]
    v = np.linalg.qr(rng.standard_normal((n, m)))[0]
    return (u * spectrum) @ v.T


def cmd_diagnose(cfg, out_dir, threads):
    """Shrinkage profiles of all three methods and the random-projection checks."""
    del threads
    for key in ("spectrum", "k", "draws"):
        if key not in cfg:
            raise ConfigError(f"diagnose config needs {key!r}")
    k, draws, seed = int(cfg["k"]), int(cfg["draws"]), int(cfg["seed"])
    z = diagnose_instance(cfg)
    # Rescale so the scaled decomposition reproduces the requested spectrum.
    svd = spectra.scaled_svd(z * np.sqrt(z.shape[0] * z.shape[1]))
    m = svd.m
    r = int(cfg.get("r", 1))
    ridge_k = float(cfg.get("ridge_k", 1.0))
    errors = []
    try:
        pca = spectra.pca_shrinkage(svd, r)
        ridge = spectra.ridge_shrinkage(svd, ridge_k)
        rp = spectra.rp_shrinkage_mc(svd, k, draws, _rng.derived_seed(seed, 1))
        off = spectra.offdiag_nullity_check(svd, k, draws, _rng.derived_seed(seed, 2))
        switch = spectra.expectation_switch_check(z, k, draws, _rng.derived_seed(seed, 3))
    except DiffuseError as exc:
        raise ConfigError(str(exc)) from exc
    d2 = svd.d**2
    bounds = []
    for i in range(m):
        lo, hi = spectra.rp_weight_bounds(d2, k, i, allow_trivial_upper=True)
        w_i, se_i = rp.weights[i], rp.se[i]
        bounds.append(
            {
                "i": i,
                "weight": w_i,
                "se": se_i,
                "lower": lo,
                "upper": hi,
                "upper_trivial": k >= m - 2,
                "inside": bool(lo - 3 * se_i <= w_i <= hi + 3 * se_i),
            }
        )
    doc = {
        "seed": seed,
        "config": _public(cfg),
        "singular_values": svd.d,
        "profiles": {
            "pca": {"params": pca.params, "weights": pca.weights},
            "ridge": {"params": ridge.params, "weights": ridge.weights},
            "rp": {"params": rp.params, "weights": rp.weights, "se": rp.se},
        },
        "rp_bounds": bounds,
        "checks": {
            "bounds": all(b["inside"] for b in bounds),
            "offdiagonal": {"passed": off.passed, "max_abs": off.max_abs, "max_z": off.max_z},
            "expectation_switch": {"passed": switch.passed, "max_z": switch.max_z},
        },
    }
    if not doc["checks"]["bounds"]:
        errors.append({"check": "bounds"})
    if not off.passed:
        errors.append({"check": "offdiagonal"})
    if not switch.passed:
        errors.append({"check": "expectation_switch"})
    w = _Writer(out_dir)
    w.json("diagnose.json", _clean(doc))
    w.manifest("diagnose", cfg, errors)
    return EXIT_PARTIAL if errors else EXIT_OK


COMMANDS = {"mc": cmd_mc, "empirical": cmd_empirical, "diagnose": cmd_diagnose}


def build_parser():
    parser = argparse.ArgumentParser(prog="diffuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out-dir", default=f"{name}_out", help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker processes (default: $DIFFUSE_THREADS or 1)")
        if name == "mc":
            p.add_argument("--reps", type=int, help="replications (overrides the config)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = resolve_threads(args.threads)
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, args.out_dir, threads)
    except (ConfigError, ValueError) as exc:
        print(json.dumps({"error": str(exc), "kind": type(exc).__name__}), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
