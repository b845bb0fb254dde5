"""Reading FRED-MD/FRED-QD style panels and turning them into design matrices.

File layout: a header row whose first cell names the date column followed by
series mnemonics; monthly files then carry a ``Transform:`` row, quarterly
files a ``factors`` row and a ``transform`` row (matched case-insensitively);
data rows start with a ``M/D/YYYY`` date. Blank or unparseable cells become
``nan``.

Transformation codes::

    1  x_t                 4  log x_t
    2  x_t - x_{t-1}        5  log x_t - log x_{t-1}
    3  second difference    6  second difference of log x_t
    7  (x_t / x_{t-1} - 1) - (x_{t-1} / x_{t-2} - 1)
"""
import csv
import datetime as _dt
import io
import logging
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import DataError, ParameterError

logger = logging.getLogger(__name__)

MONTHLY = "monthly"
QUARTERLY = "quarterly"
FREQUENCIES = (MONTHLY, QUARTERLY)
N_TARGET_LAGS_W = 4
TARGET_LAGS_X = (5, 6)
MAPPING_FILE = "fred_md_qd_subset.csv"


class TransformWarning(UserWarning):
    """Log transform met non-positive values; those cells were set missing."""


@dataclass
class RawDataset:
    """A balanced-calendar panel of named series.

    ``values`` has one row per date and one column per name. ``tcode`` maps
    name to transformation code; ``factors`` holds the optional quarterly
    factor flags; ``group`` maps name to group number where known.
    """

    frequency: str
    dates: list
    names: list
    values: np.ndarray
    tcode: dict
    factors: dict = None
    group: dict = field(default_factory=dict)
    date_label: str = "sasdate"

    def __post_init__(self):
        if self.frequency not in FREQUENCIES:
            raise ParameterError(f"frequency must be one of {FREQUENCIES}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.dates), len(self.names)):
            raise DataError("values shape does not match dates x names")
        if len(set(self.names)) != len(self.names):
            raise DataError(f"duplicate mnemonics: {_duplicates(self.names)}")
        for name in self.names:
            if self.tcode.get(name) not in range(1, 8):
                raise DataError(f"invalid tcode for {name!r}: {self.tcode.get(name)!r}")
        _check_calendar(self.dates, self.frequency)

    def column(self, name):
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise DataError(f"unknown series {name!r}") from None

    def index_of(self, date):
        try:
            return self.dates.index(date)
        except ValueError:
            raise DataError(f"date {date} not in dataset") from None

    def subset(self, names):
        idx = [self.names.index(n) for n in names]
        return replace(
            self,
            names=list(names),
            values=self.values[:, idx],
            tcode={n: self.tcode[n] for n in names},
            factors=None if self.factors is None else {n: self.factors[n] for n in names},
            group={n: self.group[n] for n in names if n in self.group},
        )


def _duplicates(names):
    seen, dup = set(), []
    for n in names:
        if n in seen and n not in dup:
            dup.append(n)
        seen.add(n)
    return dup


def _months(d):
    return d.year * 12 + d.month - 1


def _check_calendar(dates, frequency):
    step = 1 if frequency == MONTHLY else 3
    for a, b in zip(dates, dates[1:]):
        if b <= a:
            raise DataError(f"dates not strictly increasing at {b}")
        if _months(b) - _months(a) != step:
            raise DataError(f"dates not contiguous between {a} and {b}")


def _parse_date(s):
    try:
        m, d, y = (int(p) for p in s.strip().split("/"))
        return _dt.date(y, m, d)
    except ValueError:
        raise DataError(f"unparseable date {s!r}") from None


def _parse_value(s):
    try:
        return float(s)
    except ValueError:
        return np.nan


def _read_text(source):
    if isinstance(source, bytes):
        return source.decode("utf-8-sig")
    if isinstance(source, Path):
        return source.read_text(encoding="utf-8-sig")
    return source


def parse_fred_csv(source, frequency):
    """Parse FRED-MD/QD formatted CSV content.

    Parameters
    ----------
    source : bytes, str or pathlib.Path
        File content (``bytes``/``str``) or a path.
    frequency : {"monthly", "quarterly"}

    Returns
    -------
    RawDataset

    Raises
    ------
    DataError
        Missing transform row, duplicate mnemonics, bad or non-monotone dates.
    """
    if frequency not in FREQUENCIES:
        raise ParameterError(f"frequency must be one of {FREQUENCIES}")
    rows = [r for r in csv.reader(io.StringIO(_read_text(source))) if any(c.strip() for c in r)]
    if not rows:
        raise DataError("empty file")
    header = [c.strip() for c in rows[0]]
    names = header[1:]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate mnemonics: {_duplicates(names)}")
    width = len(header)
    tcode = factors = None
    body_start = 1
    for row in rows[1:]:
        label = row[0].strip().lower().rstrip(":")
        if label == "transform":
            tcode = _meta_row(row, names, "transform")
        elif label == "factors":
            factors = _meta_row(row, names, "factors")
        else:
            break
        body_start += 1
    if tcode is None:
        raise DataError("missing transform row")
    dates, values = [], []
    for row in rows[body_start:]:
        row = row + [""] * (width - len(row))
        dates.append(_parse_date(row[0]))
        values.append([_parse_value(c) for c in row[1:width]])
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise DataError("non-monotone dates")
    vals = np.array(values, dtype=float).reshape(len(dates), len(names))
    return RawDataset(frequency, dates, names, vals, tcode, factors, date_label=header[0])


def _meta_row(row, names, what):
    cells = row[1 : len(names) + 1]
    if len(cells) < len(names):
        raise DataError(f"{what} row is short")
    try:
        return {n: int(float(c)) for n, c in zip(names, cells)}
    except ValueError:
        raise DataError(f"non-integer entry in {what} row") from None


def _fmt_value(v):
    return "" if np.isnan(v) else repr(float(v))


def serialize_fred_csv(ds):
    """Write a dataset back in the layout read by ``parse_fred_csv``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([ds.date_label] + ds.names)
    if ds.frequency == QUARTERLY:
        factors = ds.factors or {n: 0 for n in ds.names}
        w.writerow(["factors"] + [factors[n] for n in ds.names])
        w.writerow(["transform"] + [ds.tcode[n] for n in ds.names])
    else:
        w.writerow(["Transform:"] + [ds.tcode[n] for n in ds.names])
    for d, row in zip(ds.dates, ds.values):
        w.writerow([f"{d.month}/{d.day}/{d.year}"] + [_fmt_value(v) for v in row])
    return buf.getvalue()


def _diff(x, lag=1):
    out = np.full_like(x, np.nan)
    out[lag:] = x[lag:] - x[:-lag]
    return out


def _safe_log(x):
    bad = ~(x > 0) & ~np.isnan(x)
    out = np.full_like(x, np.nan)
    ok = x > 0
    out[ok] = np.log(x[ok])
    return out, int(bad.sum())


def apply_tcode(series, code, return_count=False):
    """Transform one series by its code; output is aligned with the input.

    Leading observations consumed by differencing are ``nan``. Logs of
    non-positive values become ``nan`` and emit a ``TransformWarning``; with
    ``return_count=True`` the number of such cells is returned as well.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise DataError("series must be one-dimensional")
    if code not in range(1, 8):
        raise ParameterError(f"tcode must be in 1..7, got {code!r}")
    bad = 0
    if code == 1:
        out = x.copy()
    elif code == 2:
        out = _diff(x)
    elif code == 3:
        out = _diff(_diff(x))
    elif code == 7:
        growth = np.full_like(x, np.nan)
        growth[1:] = x[1:] / x[:-1] - 1.0
        out = _diff(growth)
    else:
        lx, bad = _safe_log(x)
        out = {4: lx, 5: _diff(lx), 6: _diff(_diff(lx))}[code]
    if bad:
        warnings.warn(f"{bad} non-positive value(s) under log transform", TransformWarning, stacklevel=2)
    return (out, bad) if return_count else out


def transform_dataset(ds, tcodes=None):
    """Apply each series' transformation code (``tcodes`` overrides ``ds.tcode``).

    Returns ``(dataset, bad_counts)`` with ``bad_counts`` mapping names to the
    number of cells lost to logs of non-positive values.
    """
    codes = dict(ds.tcode)
    if tcodes:
        codes.update({n: c for n, c in tcodes.items() if n in codes})
    out = np.empty_like(ds.values)
    bad = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TransformWarning)
        for j, name in enumerate(ds.names):
            out[:, j], count = apply_tcode(ds.values[:, j], codes[name], return_count=True)
            if count:
                bad[name] = count
    if bad:
        logger.warning("log transform dropped cells in %d series", len(bad))
    return replace(ds, values=out, tcode=codes), bad


def aggregate_to_quarterly(ds):
    """Average raw monthly values within calendar quarters.

    Only complete quarters are kept; a quarter with any missing month is
    missing. Each quarter is dated by its last month, day 1.
    """
    if ds.frequency != MONTHLY:
        raise ParameterError("aggregation needs a monthly dataset")
    first = next((i for i, d in enumerate(ds.dates) if d.month % 3 == 1), None)
    if first is None:
        raise DataError("no complete quarter")
    n_q = (len(ds.dates) - first) // 3
    if n_q == 0:
        raise DataError("no complete quarter")
    block = ds.values[first : first + 3 * n_q].reshape(n_q, 3, -1)
    vals = block.mean(axis=1)
    dates = [ds.dates[first + 3 * q + 2] for q in range(n_q)]
    return RawDataset(QUARTERLY, dates, list(ds.names), vals, dict(ds.tcode), None, dict(ds.group), ds.date_label)


@dataclass
class DesignWindow:
    """Regression data for one target, horizon and estimation window.

    Rows correspond to dates ``t`` in ``rows``; ``y[i] = y_{t_i + h}``. The
    forecast row (``w_new``, ``x_new``) is built at the origin date and
    ``y_future`` is the realised ``y_{origin + h}`` (``nan`` if unavailable).
    """

    target: str
    h: int
    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    w_new: np.ndarray
    x_new: np.ndarray
    y_future: float
    x_names: list
    dropped: list
    rows: np.ndarray
    origin: int
    x_mean: np.ndarray = None
    x_scale: np.ndarray = None

    @property
    def n_w(self):
        return self.w.shape[1]

    @property
    def n_x(self):
        return self.x.shape[1]

    @property
    def t(self):
        return self.y.size


def build_design(ds, target, h, window_end, window_len):
    """Lagged design for direct ``h``-step forecasts within one window.

    ``window_end`` is the forecast origin (row index of ``ds``); the window
    holds the ``window_len`` rows ``t = window_end - h - window_len + 1 ..
    window_end - h`` so every target ``y_{t+h}`` is observed by the origin.

    ``w = [1, y_{t-1}, .., y_{t-4}]`` and ``x = [y_{t-5}, y_{t-6}, other
    series at t]``. Series with a missing value in the window or at the
    origin, and columns constant over the window, are dropped (names in
    ``dropped``). ``x`` is standardised to mean 0, variance 1 (``ddof=0``)
    over the window and ``x_new`` with the same moments; ``y`` and ``w`` are
    left in levels.
    """
    if h < 1 or window_len < 1:
        raise ParameterError("need h >= 1 and window_len >= 1")
    n_dates = len(ds.dates)
    if not 0 <= window_end < n_dates:
        raise DataError(f"origin {window_end} outside the sample")
    first = window_end - h - window_len + 1
    max_lag = max(TARGET_LAGS_X)
    if first - max_lag < 0:
        raise DataError(f"window of {window_len} rows at origin {window_end} needs history before the sample start")
    rows = np.arange(first, window_end - h + 1)
    yall = ds.column(target)
    span = np.arange(first - max_lag, window_end + 1)
    if np.isnan(yall[span]).any():
        raise DataError(f"target {target!r} is missing inside the window")

    def lag(col, k):
        return col[rows - k], col[window_end - k]

    w_cols = [np.ones(rows.size)] + [lag(yall, k)[0] for k in range(1, N_TARGET_LAGS_W + 1)]
    w_new = np.array([1.0] + [lag(yall, k)[1] for k in range(1, N_TARGET_LAGS_W + 1)])
    x_cols, x_new, x_names, dropped = [], [], [], []
    candidates = [(f"{target}_lag{k}", *lag(yall, k)) for k in TARGET_LAGS_X]
    for name in ds.names:
        if name == target:
            continue
        col = ds.column(name)
        candidates.append((name, col[rows], col[window_end]))
    for name, col, new in candidates:
        if np.isnan(col).any() or np.isnan(new):
            dropped.append(name)
            continue
        x_cols.append(col)
        x_new.append(new)
        x_names.append(name)
    x = np.column_stack(x_cols) if x_cols else np.empty((rows.size, 0))
    x_new = np.asarray(x_new, dtype=float)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    keep = sd > 1e-12 * np.maximum(1.0, np.abs(mean))
    dropped += [n for n, k in zip(x_names, keep) if not k]
    x_names = [n for n, k in zip(x_names, keep) if k]
    x, x_new, mean, sd = x[:, keep], x_new[keep], mean[keep], sd[keep]
    x = (x - mean) / sd
    x_new = (x_new - mean) / sd
    y_future = float(yall[window_end + h]) if window_end + h < n_dates else np.nan
    return DesignWindow(
        target,
        h,
        np.column_stack(w_cols),
        x,
        yall[rows + h].copy(),
        w_new,
        x_new,
        y_future,
        x_names,
        dropped,
        rows,
        window_end,
        mean,
        sd,
    )


@dataclass(frozen=True)
class MappingRow:
    id_m: int
    id_q: int
    group: int
    tcode_q: int
    mnemonic: str
    description: str = ""


def load_mapping(path=None):
    """Read the monthly/quarterly variable mapping table (shipped copy by default)."""
    if path is None:
        text = resources.files("diffuse").joinpath("data", MAPPING_FILE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append(MappingRow(int(r["id_m"]), int(r["id_q"]), int(r["group"]), int(r["tcode_q"]), r["mnemonic"], r.get("description", "")))
    names = [m.mnemonic for m in out]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate mnemonics in mapping: {_duplicates(names)}")
    return out


@dataclass
class SubsetMatch:
    """Outcome of joining monthly and quarterly datasets through the mapping.

    ``pairs`` lists matched mapping rows; ``overrides`` maps mnemonic to
    ``(monthly_tcode, quarterly_tcode)`` where they differ; the unmatched
    lists name mapping rows absent from either dataset.
    """

    pairs: list
    overrides: dict
    unmatched_md: list
    unmatched_qd: list

    @property
    def names(self):
        return [p.mnemonic for p in self.pairs]

    @property
    def tcodes(self):
        return {p.mnemonic: p.tcode_q for p in self.pairs}

    @property
    def groups(self):
        return {p.mnemonic: p.group for p in self.pairs}

    def restrict(self, ds):
        """``ds`` limited to matched series, with quarterly tcodes and groups attached."""
        sub = ds.subset(self.names)
        return replace(sub, tcode=self.tcodes, group=self.groups)


def match_md_qd_subset(md, qd, mapping=None):
    """Inner-join monthly and quarterly datasets on the mapping's mnemonics.

    The quarterly tcode in the mapping wins over the monthly file's code.
    Mnemonics missing from either dataset are reported, not fatal.
    """
    mapping = load_mapping() if mapping is None else mapping
    md_names, qd_names = set(md.names), set(qd.names)
    pairs, overrides, un_md, un_qd = [], {}, [], []
    for row in mapping:
        in_md, in_qd = row.mnemonic in md_names, row.mnemonic in qd_names
        if not in_md:
            un_md.append(row.mnemonic)
        if not in_qd:
            un_qd.append(row.mnemonic)
        if in_md and in_qd:
            pairs.append(row)
            if md.tcode[row.mnemonic] != row.tcode_q:
                overrides[row.mnemonic] = (md.tcode[row.mnemonic], row.tcode_q)
    if un_md or un_qd:
        logger.info("unmatched mnemonics: %d monthly, %d quarterly", len(un_md), len(un_qd))
    return SubsetMatch(pairs, overrides, un_md, un_qd)
