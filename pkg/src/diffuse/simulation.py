"""Monte Carlo study of forecast accuracy under weak loadings.

Panels follow ``x_t = Lambda f_t + e_t`` and ``y_{t+1} = f_t' gamma + eps_{t+1}``
with ``Lambda_ij = sqrt(N^alpha / N) Z_ij``. The idiosyncratic errors are
either iid ``N(0, noise_var)`` (``rho = 0``) or a unit-variance AR(1) scaled
by ``sqrt(noise_var)``. Ridge and RP hyperparameters, and the PCA(k) factor
count, are tuned ex post: the grid point with the lowest MSFE across
replications is reported.
"""
import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _rng
from ._parallel import map_ordered
from .exceptions import DiffuseError, ParameterError
from .forecasters import TrainingSet, pca_path, ridge_path, rp_path

logger = logging.getLogger(__name__)

METHODS = ("pca", "pca_k", "ridge", "rp")
DEFAULT_RP_DRAWS = 100


@dataclass(frozen=True)
class DgpConfig:
    n: int
    t: int
    alpha: float = 1.0
    rho: float = 0.0
    r: int = 2
    gamma: tuple = None
    noise_var: float = None
    h: int = 1
    reps: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", (1.0,) * self.r)
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if self.noise_var is None:
            object.__setattr__(self, "noise_var", float(self.r))
        if not 0 < self.alpha <= 1:
            raise ParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not abs(self.rho) < 1:
            raise ParameterError(f"|rho| must be < 1, got {self.rho}")
        if self.r < 1 or len(self.gamma) != self.r:
            raise ParameterError("gamma must have one entry per factor")
        if self.n < 1 or self.t < 2 or self.h < 1:
            raise ParameterError("need n >= 1, t >= 2 and h >= 1")
        if self.t - self.h + 1 < 2:
            raise ParameterError("t too small for the horizon")
        if self.reps < 1:
            raise ParameterError("reps must be >= 1")
        if self.noise_var < 0:
            raise ParameterError("noise_var must be non-negative")
        _rng.check_seed(self.master_seed)

    def to_dict(self):
        d = asdict(self)
        d["gamma"] = list(self.gamma)
        return d


def simulate_components(cfg, rep):
    """Factors ``f`` ((T+1) x r), loadings (N x r), idiosyncratic ``e`` ((T+1) x N) and ``eps`` (T+1).

    Replication ``rep`` draws from its own stream ``(master_seed, rep)``.
    ``e`` and ``eps`` already carry the ``sqrt(noise_var)`` scale.
    """
    rng = _rng.stream(cfg.master_seed, rep)
    n, t, r = cfg.n, cfg.t, cfg.r
    f = rng.standard_normal((t + 1, r))
    loadings = np.sqrt(n**cfg.alpha / n) * rng.standard_normal((n, r))
    e = np.empty((t + 1, n))
    e[0] = rng.standard_normal(n)
    innov = np.sqrt(1.0 - cfg.rho**2) * rng.standard_normal((t, n))
    for s in range(1, t + 1):
        e[s] = cfg.rho * e[s - 1] + innov[s - 1]
    eps = rng.standard_normal(t + 1)
    sd = np.sqrt(cfg.noise_var)
    return f, loadings, sd * e, sd * eps


def simulate_panel(cfg, rep):
    """Draw one data set; return ``(TrainingSet, truth)``.

    Time runs over ``t = 0..T``. The training panel holds ``x_0..x_{T-h}``,
    the targets ``y_h..y_T``, ``x_new = x_T`` and ``truth = f_T' gamma``
    (the unforecastable ``eps_{T+h}`` is set to zero).
    """
    f, loadings, e, eps = simulate_components(cfg, rep)
    t, h = cfg.t, cfg.h
    x = f @ loadings.T + e
    signal = f @ np.asarray(cfg.gamma)
    y = signal[: t + 1 - h] + eps[h:]
    ts = TrainingSet(x[: t + 1 - h], y, x[t], h=h)
    return ts, float(signal[t])


@dataclass(frozen=True)
class Grids:
    """Hyperparameter grids searched ex post.

    Defaults: 40 geometric ridge ``k`` values on ``[1e-2, 1e6]``, RP subspace
    dimensions ``1..min(N, T_rows - 1, 60)`` and factor counts on the same
    integer range.
    """

    ridge_k: tuple = None
    rp_k: tuple = None
    pca_r: tuple = None
    rp_draws: int = DEFAULT_RP_DRAWS

    def resolve(self, cfg):
        rows = cfg.t - cfg.h + 1
        cap = min(cfg.n, rows - 1, 60)
        ridge_k = self.ridge_k if self.ridge_k is not None else tuple(np.geomspace(1e-2, 1e6, 40))
        rp_k = self.rp_k if self.rp_k is not None else tuple(range(1, cap + 1))
        pca_r = self.pca_r if self.pca_r is not None else tuple(range(1, cap + 1))
        ridge_k = tuple(float(k) for k in ridge_k)
        rp_k = tuple(int(k) for k in rp_k)
        pca_r = tuple(int(k) for k in pca_r)
        for name, grid in (("ridge_k", ridge_k), ("rp_k", rp_k), ("pca_r", pca_r)):
            if not grid:
                raise ParameterError(f"grid {name} is empty")
            if list(grid) != sorted(set(grid)):
                raise ParameterError(f"grid {name} must be strictly increasing")
        if min(rp_k) < 1 or min(pca_r) < 1:
            raise ParameterError("integer grids start at 1")
        return Grids(ridge_k, rp_k, pca_r, int(self.rp_draws))

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def expost_tune(candidate_values, errors):
    """Candidate with the smallest mean squared error across replications.

    ``errors`` has shape ``(reps, len(candidate_values))``. Exact ties go to
    the smallest candidate value.
    """
    values = np.asarray(candidate_values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ParameterError("empty candidate grid")
    errors = np.asarray(errors, dtype=float)
    if errors.ndim == 1:
        errors = errors[None, :]
    if errors.shape[1] != values.size:
        raise ParameterError("one error column per candidate is required")
    msfe = errors.mean(axis=0)
    best = np.flatnonzero(msfe == msfe.min())
    return candidate_values[best[np.argmin(values[best])]]


def pca_k_tune(max_r, errors):
    """Factor count in ``1..max_r`` minimising the MSFE (ties to fewer factors)."""
    if max_r < 1:
        raise ParameterError("max_r must be >= 1")
    return expost_tune(list(range(1, max_r + 1)), errors)


def rep_errors(cfg, rep, methods, grids):
    """Squared forecast errors of one replication, keyed by method.

    Each value is a vector over that method's grid (length 1 for ``pca``).
    """
    ts, truth = simulate_panel(cfg, rep)
    out = {}
    if "pca" in methods or "pca_k" in methods:
        r_max = max(cfg.r if "pca" in methods else 1, max(grids.pca_r) if "pca_k" in methods else 1)
        path = pca_path(ts, r_max)
        if "pca" in methods:
            out["pca"] = np.array([(path[cfg.r - 1] - truth) ** 2])
        if "pca_k" in methods:
            out["pca_k"] = (path[np.asarray(grids.pca_r) - 1] - truth) ** 2
    if "ridge" in methods:
        out["ridge"] = (ridge_path(ts, grids.ridge_k) - truth) ** 2
    if "rp" in methods:
        seed = _rng.derived_seed(cfg.master_seed, rep, 1)
        path = rp_path(ts, max(grids.rp_k), grids.rp_draws, seed).mean
        out["rp"] = (path[np.asarray(grids.rp_k) - 1] - truth) ** 2
    return out


@dataclass
class MethodResult:
    """Ex-post tuned summary for one method.

    ``grid``/``msfe_curve``/``se_curve`` give the MSFE at every grid point;
    ``best`` is the tuned value with ``msfe`` and ``se`` there.
    """

    method: str
    grid: tuple
    msfe_curve: np.ndarray
    se_curve: np.ndarray
    best: float
    msfe: float
    se: float
    errors: np.ndarray = None

    @property
    def best_errors(self):
        return None if self.errors is None else self.errors[:, self.grid.index(self.best)]


@dataclass
class McResult:
    cfg: DgpConfig
    grids: Grids
    methods: dict = field(default_factory=dict)
    reps: int = 0

    def msfe(self, method):
        return self.methods[method].msfe

    def relative(self, method, baseline="pca"):
        return self.methods[method].msfe / self.methods[baseline].msfe


class RepFailure(DiffuseError):
    """A replication failed; the whole run is aborted."""

    def __init__(self, rep, exc):
        super().__init__(f"replication {rep} failed: {exc!r}")
        self.rep = rep
        self.cause = exc


def _rep_task(args):
    cfg, rep, methods, grids = args
    try:
        return rep_errors(cfg, rep, methods, grids)
    except Exception as exc:
        raise RepFailure(rep, exc) from exc


def _method_grid(method, cfg, grids):
    return {
        "pca": (cfg.r,),
        "pca_k": grids.pca_r,
        "ridge": grids.ridge_k,
        "rp": grids.rp_k,
    }[method]


def run_monte_carlo(cfg, methods=METHODS, grids=None, threads=1, keep_errors=False):
    """Simulate ``cfg.reps`` data sets and tabulate MSFE for every method and grid point.

    Replication ``i`` depends only on ``(cfg.master_seed, i)`` and results are
    reduced in replication order, so output does not depend on ``threads``.
    Any failing replication raises ``RepFailure`` (nothing is dropped).
    """
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ParameterError(f"unknown methods {sorted(unknown)}")
    grids = (grids or Grids()).resolve(cfg)
    tasks = [(cfg, rep, methods, grids) for rep in range(cfg.reps)]
    per_rep = map_ordered(_rep_task, tasks, threads)
    result = McResult(cfg, grids, reps=cfg.reps)
    for method in methods:
        errors = np.stack([rep_out[method] for rep_out in per_rep])
        grid = tuple(_method_grid(method, cfg, grids))
        msfe_curve = errors.mean(axis=0)
        if cfg.reps > 1:
            se_curve = errors.std(axis=0, ddof=1) / np.sqrt(cfg.reps)
        else:
            se_curve = np.full(len(grid), np.nan)
        best = expost_tune(list(grid), errors)
        i = grid.index(best)
        result.methods[method] = MethodResult(
            method,
            grid,
            msfe_curve,
            se_curve,
            best,
            float(msfe_curve[i]),
            float(se_curve[i]),
            errors if keep_errors else None,
        )
    logger.info("cell n=%d t=%d alpha=%g rho=%g done", cfg.n, cfg.t, cfg.alpha, cfg.rho)
    return result


def rate_scan(cfgs, methods=("pca", "ridge"), grids=None, threads=1, baseline="pca"):
    """Run every configuration and report each method's MSFE relative to ``baseline``.

    Returns a list of dicts with ``n``, ``t``, ``alpha``, ``rho``, ``method``,
    ``relative`` and the underlying ``McResult`` under ``result``.
    """
    methods = tuple(methods)
    if baseline not in methods:
        methods = (baseline,) + methods
    rows = []
    for cfg in cfgs:
        res = run_monte_carlo(cfg, methods, grids, threads)
        for method in methods:
            if method == baseline:
                continue
            rows.append(
                {
                    "n": cfg.n,
                    "t": cfg.t,
                    "alpha": cfg.alpha,
                    "rho": cfg.rho,
                    "method": method,
                    "relative": res.relative(method, baseline),
                    "result": res,
                }
            )
    return rows


# -- serialization ------------------------------------------------------------

SUMMARY_FIELDS = ("cell", "n", "t", "alpha", "rho", "method", "msfe", "se", "best", "reps")
GRID_FIELDS = ("cell", "n", "t", "alpha", "rho", "method", "param", "msfe", "se", "is_best")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def results_to_csv(results):
    """Render ``(summary_csv, grid_csv)`` text for a list of ``McResult``.

    The summary has one row per cell and method with the tuned MSFE, its
    standard error and the chosen hyperparameter; the grid file has one row
    per cell, method and grid point.
    """
    summary, grid = io.StringIO(), io.StringIO()
    ws = csv.writer(summary, lineterminator="\n")
    wg = csv.writer(grid, lineterminator="\n")
    ws.writerow(SUMMARY_FIELDS)
    wg.writerow(GRID_FIELDS)
    for cell, res in enumerate(results):
        c = res.cfg
        head = [cell, c.n, c.t, c.alpha, c.rho]
        for method, mr in res.methods.items():
            ws.writerow([_fmt(v) for v in head] + [method] + [_fmt(mr.msfe), _fmt(mr.se), _fmt(mr.best), _fmt(res.reps)])
            for param, msfe, se in zip(mr.grid, mr.msfe_curve, mr.se_curve):
                row = head + [method, param, msfe, se, param == mr.best]
                wg.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    return summary.getvalue(), grid.getvalue()


def manifest(results, extra=None):
    """JSON-ready provenance record: every cell's configuration and grids."""
    doc = {
        "schema_version": 1,
        "cells": [{"cfg": r.cfg.to_dict(), "grids": r.grids.to_dict()} for r in results],
    }
    if extra:
        doc.update(extra)
    return json.loads(json.dumps(doc))
