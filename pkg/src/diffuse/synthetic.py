"""Synthetic monthly macro panel with a weak-loading factor structure.

Stationary series follow ``z_t = Lambda f_t + e_t`` with persistent AR(1)
factors and loadings scaled by ``sqrt(N^alpha / N)``. The idiosyncratic
part is a VAR(1), ``e_t = a e_{t-1} + (s / sqrt(N)) G e_{t-1} + v_t`` with a
fixed Gaussian ``G``, so every series carries a little predictive content
for every other one that no small set of factors captures. Each series is then mapped to a level whose FRED transformation code
recovers ``z_t``: code 1 stores ``z`` itself, code 2 its cumulative sum and
code 5 the exponential of its cumulative sum (scaled to plausible growth
rates).
"""
import datetime as _dt
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from . import _rng
from .ingest import MONTHLY, RawDataset, parse_fred_csv, serialize_fred_csv

FIXTURE_FILE = "synthetic_md.csv"
TCODE_CYCLE = (1, 2, 5, 5)
LOG_SCALE = 0.01


@dataclass(frozen=True)
class SyntheticSpec:
    n_series: int = 128
    n_months: int = 320
    n_factors: int = 2
    alpha: float = 0.75
    factor_ar: float = 0.8
    noise_ar: float = 0.0
    noise_sd: float = 1.0
    spillover: float = 0.4
    start: tuple = (1990, 1)
    seed: int = 20240101

    def to_dict(self):
        return asdict(self)


def _month_dates(start, n):
    y, m = start
    out = []
    for i in range(n):
        k = (m - 1) + i
        out.append(_dt.date(y + k // 12, k % 12 + 1, 1))
    return out


def stationary_panel(spec):
    """The transformed (stationary) panel ``z`` with its factors and loadings."""
    rng = _rng.stream(spec.seed)
    n, t, r = spec.n_series, spec.n_months, spec.n_factors
    burn = 100
    f = np.zeros((t + burn, r))
    shocks = rng.standard_normal((t + burn, r)) * np.sqrt(1.0 - spec.factor_ar**2)
    for s in range(1, t + burn):
        f[s] = spec.factor_ar * f[s - 1] + shocks[s]
    f = f[burn:]
    loadings = np.sqrt(n**spec.alpha / n) * rng.standard_normal((n, r))
    e = np.zeros((t + burn, n))
    innov = rng.standard_normal((t + burn, n)) * np.sqrt(1.0 - spec.noise_ar**2)
    # Dense cross-series spillover; spectral radius about ``spillover``.
    spill = spec.spillover / np.sqrt(n) * rng.standard_normal((n, n))
    for s in range(1, t + burn):
        e[s] = spec.noise_ar * e[s - 1] + spill @ e[s - 1] + innov[s]
    z = f @ loadings.T + spec.noise_sd * e[burn:]
    return z, f, loadings


def generate(spec=None):
    """Build the synthetic monthly ``RawDataset`` (levels plus transformation codes)."""
    spec = spec or SyntheticSpec()
    z, _, _ = stationary_panel(spec)
    names = [f"SYN{j + 1:03d}" for j in range(spec.n_series)]
    tcode = {}
    levels = np.empty_like(z)
    for j, name in enumerate(names):
        code = TCODE_CYCLE[j % len(TCODE_CYCLE)]
        tcode[name] = code
        if code == 1:
            levels[:, j] = z[:, j]
        elif code == 2:
            levels[:, j] = 100.0 + np.cumsum(z[:, j])
        else:
            levels[:, j] = 100.0 * np.exp(LOG_SCALE * np.cumsum(z[:, j]))
    return RawDataset(MONTHLY, _month_dates(spec.start, spec.n_months), names, levels, tcode)


def write_fixture(path, spec=None):
    """Regenerate the shipped fixture file at ``path``."""
    text = serialize_fred_csv(generate(spec))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def load_fixture():
    """The shipped synthetic monthly panel, parsed."""
    text = resources.files("diffuse").joinpath("data", FIXTURE_FILE).read_text(encoding="utf-8")
    return parse_fred_csv(text, MONTHLY)
