"""Out-of-sample loss accounting: MSFE, Diebold-Mariano statistics, win rates.

Loss differentials are ``d_t = loss_b - loss_a`` so a positive DM statistic
favours method ``a``. The long-run variance uses Bartlett weights with
truncation lag ``h - 1``; for ``h = 1`` it is the plain variance of ``d``
(divisor ``n``). No small-sample correction is applied.
"""
import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, ParameterError

SCHEMA_VERSION = 1
DM_MIN_LENGTH = 10
DM_ESTIMATOR = "bartlett_truncation_h_minus_1"

# Variable groups in display order 1..8.
FRED_GROUPS = {
    1: "Output and income",
    2: "Labor market",
    3: "Housing",
    4: "Consumption, orders and inventories",
    5: "Money and credit",
    6: "Interest and exchange rates",
    7: "Prices",
    8: "Stock market",
}


@dataclass
class LossPath:
    """Forecast errors of one method for one variable, indexed by forecast origin.

    ``errors`` are signed forecast errors; ``losses`` are their squares.
    """

    variable: str
    method: str
    origins: np.ndarray
    errors: np.ndarray

    def __post_init__(self):
        self.origins = np.asarray(self.origins)
        self.errors = np.asarray(self.errors, dtype=float)
        if self.errors.ndim != 1 or self.origins.shape != self.errors.shape:
            raise DataError("origins and errors must be 1-d and of equal length")
        if not np.all(np.isfinite(self.errors)):
            raise DataError(f"non-finite forecast error in {self.variable}/{self.method}")

    @property
    def losses(self):
        return self.errors**2

    def __len__(self):
        return self.errors.size


def _losses(x):
    if isinstance(x, LossPath):
        return x.losses
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("loss series must be one-dimensional")
    return x


def msfe(path):
    """Mean squared forecast error of a ``LossPath`` or of raw squared losses."""
    loss = _losses(path)
    if loss.size == 0:
        raise DataError("empty loss path")
    if not np.all(np.isfinite(loss)):
        raise DataError("losses must be finite")
    return float(np.mean(loss))


def long_run_variance(d, h=1):
    """Bartlett-kernel long-run variance of ``d`` with truncation lag ``h - 1``.

    ``g_0 + 2 sum_{j=1}^{h-1} (1 - j/h) g_j`` where ``g_j`` are sample
    autocovariances about the mean with divisor ``n``.
    """
    d = np.asarray(d, dtype=float)
    if d.ndim != 1 or d.size < 2:
        raise DataError("need a 1-d series with at least two observations")
    if int(h) != h or h < 1:
        raise ParameterError("h must be a positive integer")
    h = int(h)
    n = d.size
    dc = d - d.mean()
    lrv = float(dc @ dc) / n
    for j in range(1, min(h, n)):
        lrv += 2.0 * (1.0 - j / h) * float(dc[j:] @ dc[:-j]) / n
    return lrv


def dm_statistic(loss_a, loss_b, h=1):
    """Diebold-Mariano statistic on ``d = loss_b - loss_a``; positive favours ``a``.

    Accepts ``LossPath`` objects (compared on squared errors) or raw loss
    arrays. Returns ``nan`` as the degenerate flag when the long-run variance
    of ``d`` is not positive, e.g. for identical paths.
    """
    if isinstance(loss_a, LossPath) and isinstance(loss_b, LossPath):
        if not np.array_equal(loss_a.origins, loss_b.origins):
            raise DataError("loss paths are not aligned")
    la, lb = _losses(loss_a), _losses(loss_b)
    if la.shape != lb.shape:
        raise DataError("loss paths have different lengths")
    if la.size < DM_MIN_LENGTH:
        raise DataError(f"need at least {DM_MIN_LENGTH} observations")
    if not (np.all(np.isfinite(la)) and np.all(np.isfinite(lb))):
        raise DataError("losses must be finite")
    d = lb - la
    lrv = long_run_variance(d, h)
    scale = float(np.max(np.abs(d)))
    if scale == 0.0 or not lrv > (1e-14 * scale) ** 2:
        return math.nan
    return float(d.mean() / math.sqrt(lrv / d.size))


def win_rate(msfe_a, msfe_b):
    """Percentage of variables where ``a`` has strictly smaller MSFE than ``b``.

    ``msfe_a`` and ``msfe_b`` map variable to MSFE over a common variable
    set. Returns ``(percent, ties_percent)``; ties count for neither side.
    """
    keys = set(msfe_a)
    if keys != set(msfe_b):
        raise DataError("win rate needs a common variable set")
    if not keys:
        raise DataError("win rate over an empty variable set")
    wins = sum(1 for v in keys if msfe_a[v] < msfe_b[v])
    ties = sum(1 for v in keys if msfe_a[v] == msfe_b[v])
    return 100.0 * wins / len(keys), 100.0 * ties / len(keys)


def dm_shift(dm_long, dm_short, groups=None):
    """Per-variable DM difference ``dm_long - dm_short``.

    With ``groups`` (variable -> group number 1..8) the result is a dict
    of group number to an ordered ``{variable: shift}`` dict, groups
    ascending; otherwise a flat ``{variable: shift}``.
    """
    if set(dm_long) != set(dm_short):
        missing = sorted(set(dm_long) ^ set(dm_short))
        raise DataError(f"variable sets differ: {missing}")
    shift = {v: dm_long[v] - dm_short[v] for v in dm_long}
    if groups is None:
        return shift
    out = {}
    for v in dm_long:
        if v not in groups:
            raise DataError(f"variable {v!r} has no group")
    for v in sorted(dm_long, key=lambda v: (groups[v], list(dm_long).index(v))):
        out.setdefault(groups[v], {})[v] = shift[v]
    return dict(sorted(out.items()))


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating,)):
        return _jsonable(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


@dataclass
class EvaluationReport:
    """Per-variable MSFEs and pairwise DM statistics for one window and horizon.

    ``msfe`` maps variable -> method -> MSFE; ``dm`` maps variable ->
    ``"a|b"`` -> DM statistic (``nan`` flags a degenerate differential).
    """

    h: int
    window: str
    methods: tuple
    msfe: dict = field(default_factory=dict)
    dm: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_paths(cls, paths, h, window, pairs, metadata=None):
        """Build from ``{variable: {method: LossPath}}`` and a list of ``(a, b)`` pairs."""
        methods = []
        rep = cls(h=h, window=str(window), methods=(), metadata=dict(metadata or {}))
        rep.metadata.setdefault("dm_estimator", DM_ESTIMATOR)
        for var, by_method in paths.items():
            rep.msfe[var] = {}
            for m, p in by_method.items():
                rep.msfe[var][m] = msfe(p)
                if m not in methods:
                    methods.append(m)
            rep.dm[var] = {f"{a}|{b}": dm_statistic(by_method[a], by_method[b], h) for a, b in pairs}
        rep.methods = tuple(methods)
        return rep

    def variables(self):
        return list(self.msfe)

    def dm_pair(self, a, b):
        key = f"{a}|{b}"
        return {v: d[key] for v, d in self.dm.items()}

    def win_rate(self, a, b):
        return win_rate({v: m[a] for v, m in self.msfe.items()}, {v: m[b] for v, m in self.msfe.items()})

    def to_dict(self):
        pairs = sorted({k for d in self.dm.values() for k in d})
        win = {}
        for p in pairs:
            a, b = p.split("|")
            pct, ties = self.win_rate(a, b)
            win[p] = {"percent": pct, "ties_percent": ties}
        variables = {}
        for v in self.msfe:
            variables[v] = {m: {"msfe": self.msfe[v][m]} for m in self.msfe[v]}
            variables[v]["dm"] = dict(self.dm.get(v, {}))
        return _jsonable(
            {
                "schema_version": SCHEMA_VERSION,
                "h": self.h,
                "window": self.window,
                "methods": list(self.methods),
                "variables": variables,
                "win_rates": win,
                "metadata": self.metadata,
            }
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported schema_version {doc.get('schema_version')!r}")
        rep = cls(h=int(doc["h"]), window=doc["window"], methods=tuple(doc["methods"]), metadata=doc.get("metadata", {}))
        for v, entry in doc["variables"].items():
            rep.msfe[v] = {m: e["msfe"] for m, e in entry.items() if m != "dm"}
            rep.dm[v] = {k: (math.nan if x is None else x) for k, x in entry.get("dm", {}).items()}
        return rep

    def csv_rows(self):
        """Flat rows ``(window, h, variable, method, msfe, pair, dm)``."""
        rows = []
        for v in self.msfe:
            for m, val in self.msfe[v].items():
                rows.append((self.window, self.h, v, "msfe", m, val))
            for p, val in self.dm.get(v, {}).items():
                rows.append((self.window, self.h, v, "dm", p, val))
        return rows


CSV_HEADER = ("window", "h", "variable", "metric", "key", "value")


def reports_to_csv(reports):
    """Flat CSV for plotting: one row per window, variable and metric."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rep in reports:
        for row in rep.csv_rows():
            w.writerow(list(row[:-1]) + [repr(float(row[-1]))])
    return buf.getvalue()
