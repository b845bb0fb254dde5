"""Rolling-window pseudo out-of-sample forecasting on a macro panel.

For every target and window length the three methods produce direct
``h``-step forecasts at each origin from ``forecast_start`` onward. The
hyperparameter (factor count, ridge penalty, subspace dimension) used at
origin ``tau`` minimises the cumulative squared error of forecasts already
realised by ``tau`` (origins ``s`` with ``forecast_start <= s`` and
``s + h <= tau``); before any error is realised the first grid point is
used. Losses are recorded from ``eval_start``.
"""
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _rng
from ._parallel import map_ordered
from .evaluation import EvaluationReport, LossPath, dm_shift
from .exceptions import DataError, ParameterError
from .forecasters import TrainingSet, pca_path, ridge_path, rp_path
from .ingest import N_TARGET_LAGS_W, aggregate_to_quarterly, build_design, transform_dataset

logger = logging.getLogger(__name__)

METHODS = ("pca", "ridge", "rp")
WINDOW_MULTIPLES = (1 / 3, 1 / 2, 2 / 3, 5 / 6, 1.0, 7 / 6, 4 / 3)
MAX_FACTORS = 50
MAX_SUBSPACE = 50
DEFAULT_RP_DRAWS = 1000
LOG_PENALTY_START = -14.7
LOG_PENALTY_STEP = 0.3
LOG_PENALTY_COUNT = 100


def log_penalty_grid():
    """Natural-log ridge penalties ``-14.7, -14.4, ..., 15.0`` (100 points)."""
    return np.round(LOG_PENALTY_START + LOG_PENALTY_STEP * np.arange(LOG_PENALTY_COUNT), 10)


@dataclass(frozen=True)
class EmpiricalConfig:
    """Settings of one rolling-window study.

    ``forecast_start``/``eval_start``/``last_origin`` are row indices of the
    transformed dataset; ``last_origin=None`` uses the last origin whose
    ``h``-step target is observed.
    """

    h: int
    window_lengths: tuple
    forecast_start: int
    eval_start: int
    last_origin: int = None
    methods: tuple = ("pca", "ridge")
    targets: tuple = None
    rp_draws: int = DEFAULT_RP_DRAWS
    max_factors: int = MAX_FACTORS
    max_subspace: int = MAX_SUBSPACE
    seed: int = 0

    def __post_init__(self):
        if self.h < 1:
            raise ParameterError("h must be >= 1")
        if not self.window_lengths or min(self.window_lengths) < 1:
            raise ParameterError("window lengths must be positive")
        if self.eval_start < self.forecast_start:
            raise ParameterError("eval_start precedes forecast_start")
        if set(self.methods) - set(METHODS) or not self.methods:
            raise ParameterError(f"methods must be a non-empty subset of {METHODS}")
        if self.rp_draws < 1 or self.max_factors < 1 or self.max_subspace < 1:
            raise ParameterError("draw and grid sizes must be positive")
        _rng.check_seed(self.seed)

    def to_dict(self):
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def window_lengths(n_x, multiples=WINDOW_MULTIPLES):
    """Window lengths ``round(m * n_x)`` for each multiple ``m``."""
    return tuple(int(round(m * n_x)) for m in multiples)


def _grid_sizes(cfg, window_len):
    free = window_len - N_TARGET_LAGS_W - 2
    return {
        "pca": max(0, min(cfg.max_factors, free)),
        "ridge": LOG_PENALTY_COUNT,
        "rp": max(0, min(cfg.max_subspace, free)),
    }


def _grid_values(method, size):
    if method == "ridge":
        return [float(g) for g in log_penalty_grid()]
    return list(range(1, size + 1))


def _origin_paths(dw, cfg, sizes, seed):
    """Forecast paths of every method at one origin, padded with nan to ``sizes``."""
    ts = TrainingSet(dw.x, dw.y, dw.x_new, h=cfg.h)
    out = {}
    for method in cfg.methods:
        path = np.full(sizes[method], np.nan)
        if method == "ridge":
            k = dw.n_x * dw.t / np.exp(log_penalty_grid())
            path[:] = ridge_path(ts, k, dw.w, dw.w_new)
        else:
            cap = min(sizes[method], dw.n_x)
            if cap >= 1:
                if method == "pca":
                    vals = pca_path(ts, cap, dw.w, dw.w_new)
                else:
                    vals = rp_path(ts, cap, cfg.rp_draws, seed, dw.w, dw.w_new).mean
                path[:cap] = vals
        out[method] = path
    return out


@dataclass
class TargetRun:
    """Forecast record for one target and window length.

    ``errors[method]`` holds realised errors at ``origins`` using the
    hyperparameter chosen at each origin (``choices[method]``, a grid value).
    """

    target: str
    window_len: int
    origins: list
    errors: dict = field(default_factory=dict)
    choices: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)


def _last_origin(ds, cfg):
    last = len(ds.dates) - 1 - cfg.h
    return last if cfg.last_origin is None else min(cfg.last_origin, last)


def run_target(ds, target, window_len, cfg, target_index=0, window_index=0):
    """Rolling forecasts for one target and one window length."""
    sizes = _grid_sizes(cfg, window_len)
    for method in cfg.methods:
        if method != "ridge" and sizes[method] < 1:
            raise DataError(f"window {window_len} too short for {method}")
    last = _last_origin(ds, cfg)
    origins = list(range(cfg.forecast_start, last + 1))
    if cfg.eval_start > last:
        raise DataError("evaluation sample is empty")
    sq = {m: np.full((len(origins), sizes[m]), np.nan) for m in cfg.methods}
    fc_err = {m: np.full((len(origins), sizes[m]), np.nan) for m in cfg.methods}
    dropped = set()
    for i, tau in enumerate(origins):
        dw = build_design(ds, target, cfg.h, tau, window_len)
        dropped.update(dw.dropped)
        seed = _rng.derived_seed(cfg.seed, target_index, window_index, tau)
        paths = _origin_paths(dw, cfg, sizes, seed)
        for m, path in paths.items():
            fc_err[m][i] = dw.y_future - path
            sq[m][i] = fc_err[m][i] ** 2
    run = TargetRun(target, window_len, [], dropped=sorted(dropped))
    for m in cfg.methods:
        grid = _grid_values(m, sizes[m])
        cum = np.zeros(sizes[m])
        realised = 0
        errs, picks = [], []
        for i, tau in enumerate(origins):
            # Add every origin whose target is observed by tau.
            while realised < len(origins) and origins[realised] + cfg.h <= tau:
                row = sq[m][realised]
                cum += np.where(np.isnan(row), np.inf, row)
                realised += 1
            j = int(np.argmin(cum)) if realised else 0
            if tau >= cfg.eval_start:
                errs.append(fc_err[m][i, j])
                picks.append(grid[j])
        if not np.all(np.isfinite(errs)):
            raise DataError(f"{target}: non-finite {m} forecast in the evaluation sample")
        run.errors[m] = np.asarray(errs)
        run.choices[m] = picks
    run.origins = [tau for tau in origins if tau >= cfg.eval_start]
    return run


def _target_task(args):
    ds, target, ti, cfg = args
    return [run_target(ds, target, wl, cfg, ti, wi) for wi, wl in enumerate(cfg.window_lengths)]


@dataclass
class EmpiricalResult:
    """Per-window reports plus the raw target runs."""

    cfg: EmpiricalConfig
    runs: list
    reports: dict
    shifts: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def win_rate(self, window_len, a="pca", b="ridge"):
        return self.reports[window_len].win_rate(a, b)[0]


PAIRS = (("ridge", "pca"), ("rp", "pca"))


def run_empirical(ds, cfg, threads=1, groups=None, strict=False):
    """Run every target and window; build evaluation reports.

    ``ds`` must already be transformed. A target whose run fails is recorded
    in ``failures`` (or re-raised with ``strict``) and left out of the reports.
    """
    targets = list(cfg.targets) if cfg.targets else list(ds.names)
    missing = [t for t in targets if t not in ds.names]
    if missing:
        raise DataError(f"unknown targets {missing}")
    tasks = [(ds, t, ti, cfg) for ti, t in enumerate(targets)]
    outcomes = map_ordered(_safe_task, tasks, threads)
    runs, failures = [], []
    for target, (ok, value) in zip(targets, outcomes):
        if ok:
            runs.append(value)
        elif strict:
            raise DataError(f"target {target} failed: {value}")
        else:
            failures.append({"target": target, "error": value})
    pairs = [(a, b) for a, b in PAIRS if a in cfg.methods and b in cfg.methods]
    reports = {}
    for wi, wl in enumerate(cfg.window_lengths):
        paths = {}
        for per_window in runs:
            run = per_window[wi]
            paths[run.target] = {m: LossPath(run.target, m, run.origins, run.errors[m]) for m in cfg.methods}
        meta = {
            "window_len": wl,
            "n_origins": len(runs[0][wi].origins) if runs else 0,
            "hyperparameters": {r[wi].target: r[wi].choices for r in runs},
            "dropped_series": {r[wi].target: r[wi].dropped for r in runs},
            "ridge_grid": "log penalty lambda; k = n_x * window_len / exp(value)",
            "standardization": "x within each window to mean 0, variance 1 (ddof=0); y and target lags raw",
            "missing_data": "series incomplete in the window or at the origin are dropped",
            "selection": "every origin, cumulative squared error of realised forecasts since forecast_start",
        }
        if paths:
            reports[wl] = EvaluationReport.from_paths(paths, cfg.h, wl, pairs, meta)
    shifts = {}
    if len(reports) >= 2:
        long, short = max(reports), min(reports)
        for a, b in pairs:
            key = f"{a}|{b}"
            shifts[key] = dm_shift(reports[long].dm_pair(a, b), reports[short].dm_pair(a, b), groups)
    return EmpiricalResult(cfg, runs, reports, shifts, failures)


def _safe_task(args):
    try:
        return True, _target_task(args)
    except (DataError, ParameterError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return False, f"{type(exc).__name__}: {exc}"


def frequency_datasets(monthly_raw, match):
    """Monthly and quarterly transformed panels over the matched series.

    Quarterly values are within-quarter means of the raw monthly data; both
    frequencies are transformed with the quarterly transformation codes.
    """
    sub = match.restrict(monthly_raw)
    monthly, _ = transform_dataset(sub)
    quarterly, _ = transform_dataset(replace(aggregate_to_quarterly(sub), tcode=match.tcodes))
    return monthly, quarterly
