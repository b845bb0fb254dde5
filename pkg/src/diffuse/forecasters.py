"""PCA, ridge and random-projection forecasts for the diffusion index model.

The one-shot functions (``pca_forecast``, ``ridge_forecast``, ``rp_forecast``,
``partialled_forecast``) follow the textbook formulas literally. The
``*_path`` functions return forecasts for a whole hyperparameter grid from a
single decomposition and are what the simulation and the empirical harness
call; the test suite pins each path to the one-shot functions.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _rng
from .exceptions import DataError, ParameterError, RankError, SingularDesignError
from .spectra import MAX_RETRIES, SINGULAR_TOL, as_panel, ridge_weights, scaled_svd

#: Relative singular value below which a PCA factor is not identified.
RANK_RTOL = 1e-12
RP_BLOCK = 256


@dataclass(frozen=True)
class ForecastMethod:
    """A forecast rule and its hyperparameters.

    Use the constructors ``ForecastMethod.pca(r)``, ``ForecastMethod.ridge(k)``
    and ``ForecastMethod.rp(k, draws, seed)``.
    """

    tag: str
    r: int = None
    k: float = None
    draws: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.tag == "pca":
            if self.r is None or self.r < 1:
                raise ParameterError("PCA needs r >= 1")
        elif self.tag == "ridge":
            if self.k is None or not self.k > 0:
                raise ParameterError("ridge needs k > 0")
        elif self.tag == "rp":
            if self.k is None or int(self.k) != self.k or self.k < 1 or self.draws < 1:
                raise ParameterError("RP needs an integer k >= 1 and draws >= 1")
            _rng.check_seed(self.seed)
        else:
            raise ParameterError(f"unknown forecast method {self.tag!r}")

    @classmethod
    def pca(cls, r):
        return cls("pca", r=int(r))

    @classmethod
    def ridge(cls, k):
        return cls("ridge", k=float(k))

    @classmethod
    def rp(cls, k, draws, seed):
        return cls("rp", k=int(k), draws=int(draws), seed=int(seed))


@dataclass(frozen=True)
class TrainingSet:
    """Predictors ``x`` (rows t = 0..T-h), targets ``y`` (y_h..y_T) and ``x_new`` (x_T)."""

    x: np.ndarray
    y: np.ndarray
    x_new: np.ndarray
    h: int = 1

    def __post_init__(self):
        x = as_panel(self.x).values
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x_new = np.asarray(self.x_new, dtype=float).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise DataError(f"{x.shape[0]} predictor rows but {y.shape[0]} targets")
        if x_new.shape[0] != x.shape[1]:
            raise DataError(f"x_new has {x_new.shape[0]} entries, panel has {x.shape[1]} columns")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x_new))):
            raise DataError("targets or x_new contain non-finite values")
        if self.h < 1:
            raise ParameterError("horizon must be >= 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_new", x_new)

    @property
    def n_rows(self):
        return self.x.shape[0]

    @property
    def n_cols(self):
        return self.x.shape[1]


def ols_forecast(ts):
    """Least squares forecast ``x_new' (X'X)^-1 X'y`` (minimum-norm if rank deficient)."""
    beta = np.linalg.lstsq(ts.x, ts.y, rcond=None)[0]
    return float(ts.x_new @ beta)


def _check_pca_rank(svd, r):
    if not 1 <= r <= svd.m:
        raise RankError(f"r={r} outside [1, {svd.m}]")
    if not svd.d[r - 1] > RANK_RTOL * svd.d[0]:
        raise RankError(f"r={r} exceeds the numerical rank of the panel")


def pca_forecast(ts, r, svd=None):
    """Diffusion index forecast with ``r`` principal-component factors.

    Factors are ``F = sqrt(T) U_r`` from the SVD of ``X / sqrt(N T)``, the
    new factor value is ``D_r^-1 V_r' x_new / sqrt(N)`` and ``gamma`` is the
    least squares coefficient of ``y`` on ``F``. Only the training rows enter
    the decomposition, so ``x_new`` never influences the loadings.
    """
    svd = scaled_svd(ts.x) if svd is None else svd
    _check_pca_rank(svd, r)
    u_r, d_r, v_r = svd.split(r)
    f = np.sqrt(svd.n_rows) * u_r
    gamma = np.linalg.solve(f.T @ f, f.T @ ts.y)
    f_new = (v_r.T @ ts.x_new) / d_r / np.sqrt(svd.n_cols)
    return float(f_new @ gamma)


def ridge_penalty(n_rows, n_cols, k):
    return n_rows * n_cols / k


def ridge_forecast(ts, k, form="auto"):
    """Ridge forecast ``x_new' (X'X + (NT/k) I)^-1 X'y``.

    ``form='primal'`` solves the N x N system, ``form='dual'`` the T x T
    system ``x_new' X' (XX' + (NT/k) I)^-1 y``; ``'auto'`` picks the smaller.
    """
    if not k > 0:
        raise ParameterError(f"ridge k must be positive, got {k}")
    x, y = ts.x, ts.y
    t, n = x.shape
    lam = ridge_penalty(t, n, k)
    if form == "auto":
        form = "primal" if n <= t else "dual"
    if form == "primal":
        beta = scipy.linalg.solve(x.T @ x + lam * np.eye(n), x.T @ y, assume_a="pos")
        return float(ts.x_new @ beta)
    if form == "dual":
        alpha = scipy.linalg.solve(x @ x.T + lam * np.eye(t), y, assume_a="pos")
        return float((x @ ts.x_new) @ alpha)
    raise ParameterError(f"unknown ridge form {form!r}")


def _ls_forecast(design, y, design_new, what):
    q, rq = np.linalg.qr(design)
    diag = np.abs(np.diag(rq))
    if diag.size == 0 or diag.min() <= SINGULAR_TOL * diag.max():
        raise SingularDesignError(f"{what}: design is rank deficient")
    theta = scipy.linalg.solve_triangular(rq, q.T @ y)
    return float(design_new @ theta)


def rp_forecast_single(ts, proj):
    """Least squares forecast in the compressed model ``y = X R theta``."""
    proj = np.asarray(proj, dtype=float)
    if proj.ndim != 2 or proj.shape[0] != ts.n_cols:
        raise DataError(f"projection must be {ts.n_cols} x k, got {proj.shape}")
    return _ls_forecast(ts.x @ proj, ts.y, ts.x_new @ proj, "rp_forecast_single")


def draw_projection(rng, n, k):
    """Next ``N x k`` standard Gaussian projection from ``rng``.

    Columns are filled one after another, so the first ``k'`` columns of a
    wider draw coincide with a ``k'``-column draw from the same state.
    """
    return rng.standard_normal((k, n)).T


def projection_stream(seed, draw):
    """Generator for projection number ``draw`` under ``seed``."""
    return _rng.stream(_rng.check_seed(seed), draw)


def _rp_draws(ts, k, draws, seed, start, forecast_fn):
    out = np.empty(draws)
    regenerated = 0
    for pos, j in enumerate(range(start, start + draws)):
        rng = projection_stream(seed, j)
        for attempt in range(MAX_RETRIES + 1):
            try:
                out[pos] = forecast_fn(draw_projection(rng, ts.n_cols, k))
                break
            except SingularDesignError:
                continue
        else:
            raise SingularDesignError(
                f"draw {j}: singular projected design after {MAX_RETRIES} regenerations",
                retries=MAX_RETRIES,
            )
        regenerated += attempt
    return out, regenerated


def rp_forecast_draws(ts, k, draws, seed, start=0):
    """Per-draw random-projection forecasts for draws ``start .. start+draws-1``.

    Returns ``(forecasts, regenerated)`` where ``regenerated`` counts singular
    draws replaced by a fresh draw from the same stream.
    """
    if not 1 <= k <= ts.n_cols:
        raise ParameterError(f"k must lie in [1, {ts.n_cols}], got {k}")
    if draws < 1:
        raise ParameterError("draws must be >= 1")
    return _rp_draws(ts, k, draws, seed, start, lambda r: rp_forecast_single(ts, r))


def rp_forecast(ts, k, draws, seed):
    """Random-projection forecast averaged over ``draws`` Gaussian projections."""
    values, _ = rp_forecast_draws(ts, k, draws, seed)
    return float(values.mean())


# -- always-included regressors -----------------------------------------------


@dataclass(frozen=True)
class _Partialled:
    base: float
    x: np.ndarray
    y: np.ndarray
    x_new: np.ndarray
    coef_map: np.ndarray  # W (W'W)^-1 w_new


def _partial_out(ts, w, w_new):
    """Annihilate ``W`` from ``y`` and ``X``.

    With ``c = W (W'W)^-1 w_new`` every forecast of the form
    ``w_new' b_w + x_new' b_x`` with ``b_w`` the OLS coefficient given
    ``b_x`` equals ``c'y + (x_new - X'c)' b_x``.
    """
    if w is None:
        return _Partialled(0.0, ts.x, ts.y, ts.x_new, np.zeros(ts.n_rows))
    w = np.asarray(w, dtype=float)
    w_new = np.asarray(w_new, dtype=float).reshape(-1)
    if w.ndim != 2 or w.shape[0] != ts.n_rows or w_new.shape[0] != w.shape[1]:
        raise DataError("always-included block does not align with the training set")
    if w.shape[1] == 0:
        return _Partialled(0.0, ts.x, ts.y, ts.x_new, np.zeros(ts.n_rows))
    q, rw = np.linalg.qr(w)
    diag = np.abs(np.diag(rw))
    if diag.min() <= SINGULAR_TOL * diag.max():
        raise SingularDesignError("always-included block W is rank deficient")
    g = scipy.linalg.solve_triangular(rw, w_new, trans="T")
    c = q @ g
    y_res = ts.y - q @ (q.T @ ts.y)
    x_res = ts.x - q @ (q.T @ ts.x)
    return _Partialled(float(c @ ts.y), x_res, y_res, ts.x_new - ts.x.T @ c, c)


def partialled_forecast(w_block, w_new, ts, method):
    """Forecast with an unpenalized, always-included regressor block ``W``.

    * PCA: factors come from ``X`` alone; ``y`` is regressed on ``[W, F]``.
    * Ridge: only the ``X`` coefficients are penalized (by ``N T / k``).
      ``W`` is partialled out of ``y`` and ``X``, ridge is applied to the
      residuals and the ``W`` coefficients are recovered afterwards.
    * RP: each draw is an OLS regression of ``y`` on ``[W, X R]``.

    An empty block (zero columns) gives the plain forecasts.
    """
    w_block = np.asarray(w_block, dtype=float).reshape(ts.n_rows, -1)
    w_new = np.asarray(w_new, dtype=float).reshape(-1)
    if w_block.shape[1] != w_new.shape[0]:
        raise DataError("w_new length does not match the W block")
    if w_block.shape[1] == 0:
        if method.tag == "pca":
            return pca_forecast(ts, method.r)
        if method.tag == "ridge":
            return ridge_forecast(ts, method.k)
        return rp_forecast(ts, method.k, method.draws, method.seed)
    _, rw = np.linalg.qr(w_block)
    diag = np.abs(np.diag(rw))
    if diag.min() <= SINGULAR_TOL * diag.max():
        raise SingularDesignError("always-included block W is rank deficient")

    if method.tag == "pca":
        svd = scaled_svd(ts.x)
        _check_pca_rank(svd, method.r)
        u_r, d_r, v_r = svd.split(method.r)
        f = np.sqrt(svd.n_rows) * u_r
        f_new = (v_r.T @ ts.x_new) / d_r / np.sqrt(svd.n_cols)
        return _ls_forecast(
            np.hstack([w_block, f]), ts.y, np.concatenate([w_new, f_new]), "partialled PCA"
        )

    if method.tag == "ridge":
        p = _partial_out(ts, w_block, w_new)
        t, n = ts.x.shape
        lam = ridge_penalty(t, n, method.k)
        if n <= t:
            beta_x = scipy.linalg.solve(p.x.T @ p.x + lam * np.eye(n), p.x.T @ p.y, assume_a="pos")
        else:
            beta_x = p.x.T @ scipy.linalg.solve(p.x @ p.x.T + lam * np.eye(t), p.y, assume_a="pos")
        beta_w = np.linalg.lstsq(w_block, ts.y - ts.x @ beta_x, rcond=None)[0]
        return float(w_new @ beta_w + ts.x_new @ beta_x)

    def one_draw(r):
        return _ls_forecast(
            np.hstack([w_block, ts.x @ r]),
            ts.y,
            np.concatenate([w_new, ts.x_new @ r]),
            "partialled RP",
        )

    if not 1 <= method.k <= ts.n_cols:
        raise ParameterError(f"k must lie in [1, {ts.n_cols}], got {method.k}")
    values, _ = _rp_draws(ts, int(method.k), method.draws, method.seed, 0, one_draw)
    return float(values.mean())


# -- grid paths ---------------------------------------------------------------


def _nested_ls(design, y, design_new):
    """Forecasts from least squares on every leading block of columns.

    Entry ``j`` uses columns ``0..j``. Forward substitution on ``Rq'`` is
    nested, so one QR and one triangular solve serve every prefix.
    """
    q, rq = np.linalg.qr(design)
    diag = np.abs(np.diag(rq))
    ok = diag > SINGULAR_TOL * diag.max()
    n_ok = int(np.argmin(ok)) if not ok.all() else ok.size
    z = np.full(design.shape[1], np.nan)
    if n_ok:
        z[:n_ok] = scipy.linalg.solve_triangular(rq[:n_ok, :n_ok], design_new[:n_ok], trans="T")
    return np.cumsum(z * (q.T @ y))


def pca_path(ts, r_max, w=None, w_new=None, svd=None):
    """PCA forecasts for ``r = 1..r_max``, optionally with an always-included block."""
    svd = scaled_svd(ts.x) if svd is None else svd
    _check_pca_rank(svd, r_max)
    u_r, d_r, v_r = svd.split(r_max)
    f = np.sqrt(svd.n_rows) * u_r
    f_new = (v_r.T @ ts.x_new) / d_r / np.sqrt(svd.n_cols)
    if w is None or np.asarray(w).size == 0:
        return _nested_ls(f, ts.y, f_new)
    w = np.asarray(w, dtype=float)
    paths = _nested_ls(np.hstack([w, f]), ts.y, np.concatenate([np.asarray(w_new, float), f_new]))
    out = paths[w.shape[1]:]
    if np.isnan(paths[: w.shape[1]]).any():
        raise SingularDesignError("always-included block W is rank deficient")
    return out


def _spectral(p):
    svd = scaled_svd(p.x)
    a = svd.v.T @ p.x_new
    b = svd.u.T @ p.y
    return svd, a, b


def ridge_path(ts, k_grid, w=None, w_new=None):
    """Ridge forecasts for every ``k`` in ``k_grid`` (penalty ``N T / k`` on ``X`` only)."""
    k_grid = np.asarray(k_grid, dtype=float).reshape(-1)
    if np.any(k_grid <= 0):
        raise ParameterError("ridge k values must be positive")
    p = _partial_out(ts, w, w_new)
    svd, a, b = _spectral(p)
    keep = svd.d > RANK_RTOL * svd.d[0] if svd.d[0] > 0 else np.zeros(svd.m, bool)
    d = svd.d[keep]
    contrib = a[keep] * b[keep] / (svd.scale * d)
    weights = ridge_weights(d[None, :], k_grid[:, None])
    return p.base + weights @ contrib


@dataclass(frozen=True)
class RpPath:
    """Random-projection forecasts for ``k = 1..k_max``.

    ``mean[k-1]`` averages ``draws`` projections; ``per_draw`` (optional) has
    shape ``(draws, k_max)``.
    """

    mean: np.ndarray
    regenerated: int
    per_draw: np.ndarray = None


def _perp_norm(x_new, x_row):
    # Round-off residue when x_new lies in the row space (always for N <= T).
    rho = float(np.linalg.norm(x_new - x_row))
    return 0.0 if rho <= 1e-10 * max(float(np.linalg.norm(x_new)), 1e-300) else rho


def spectral_draw(rng, m, k_max):
    """The Gaussian variates consumed by one ``rp_path`` draw.

    ``g`` (m x k_max) is the projection expressed in the right singular
    basis and ``h`` (k_max) its component along the part of ``x_new``
    orthogonal to the row space of ``X``.
    """
    g = rng.standard_normal((k_max, m)).T
    h = rng.standard_normal(k_max)
    return g, h


def rp_path(ts, k_max, draws, seed, w=None, w_new=None, keep_draws=False):
    """Random-projection forecasts for every ``k = 1..k_max`` from shared draws.

    For a Gaussian ``R`` the pair ``(X R, x_new' R)`` has the same law as
    ``(U D G, a' G + rho h')`` with ``G`` and ``h`` Gaussian, ``a = V' x_new``
    and ``rho`` the norm of ``x_new`` outside the row space of ``X``. Each
    draw therefore costs one small QR in the ``m``-dimensional singular basis
    instead of a T x N x k product. Draw ``j`` uses the stream
    ``(seed, j)``, and prefix ``k`` of a draw is itself a valid k-column draw.
    With ``w`` given, ``W`` is partialled out first (OLS on ``[W, X R]``).
    """
    seed = _rng.check_seed(seed)
    if draws < 1:
        raise ParameterError("draws must be >= 1")
    p = _partial_out(ts, w, w_new)
    svd, a, b = _spectral(p)
    rank = svd.numerical_rank(RANK_RTOL)
    if not 1 <= k_max <= rank:
        raise RankError(f"k_max={k_max} must lie in [1, {rank}] (numerical rank)")
    m = svd.m
    rho = _perp_norm(p.x_new, svd.v @ a)
    d = svd.d * svd.scale
    out = np.empty((draws, k_max))
    regenerated = 0
    for start in range(0, draws, RP_BLOCK):
        idx = range(start, min(start + RP_BLOCK, draws))
        rngs = [projection_stream(seed, j) for j in idx]
        gs, hs = zip(*(spectral_draw(rng, m, k_max) for rng in rngs))
        g = np.stack(gs)
        h = np.stack(hs)
        q, rq = np.linalg.qr(d[None, :, None] * g)
        diag = np.abs(np.diagonal(rq, axis1=1, axis2=2))
        bad = np.flatnonzero(diag.min(axis=1) <= SINGULAR_TOL * diag.max(axis=1))
        for i in bad:
            for attempt in range(1, MAX_RETRIES + 1):
                g[i], h[i] = spectral_draw(rngs[i], m, k_max)
                q[i], rq[i] = np.linalg.qr(d[:, None] * g[i])
                di = np.abs(np.diag(rq[i]))
                if di.min() > SINGULAR_TOL * di.max():
                    regenerated += attempt
                    break
            else:
                raise SingularDesignError(
                    f"draw {start + i}: singular projected design after {MAX_RETRIES} regenerations",
                    retries=MAX_RETRIES,
                )
        c = np.einsum("m,bmk->bk", a, g) + rho * h
        z = np.linalg.solve(np.swapaxes(rq, 1, 2), c[:, :, None])[:, :, 0]
        qb = np.einsum("bmk,m->bk", q, b)
        out[start : start + len(idx)] = np.cumsum(z * qb, axis=1)
    mean = p.base + out.mean(axis=0)
    return RpPath(mean, regenerated, p.base + out if keep_draws else None)


def explicit_projection(ts, seed, draw, k_max, w=None, w_new=None):
    """The ``N x k_max`` matrix ``R`` realised by draw ``draw`` of ``rp_path``.

    ``R = V G + x_perp h' / rho`` reproduces that draw's forecasts exactly
    through ``rp_forecast_single``; used to test the spectral shortcut.
    """
    p = _partial_out(ts, w, w_new)
    svd, a, _ = _spectral(p)
    g, h = spectral_draw(projection_stream(seed, draw), svd.m, k_max)
    x_perp = p.x_new - svd.v @ a
    rho = _perp_norm(p.x_new, svd.v @ a)
    r = svd.v @ g
    if rho > 0:
        r = r + np.outer(x_perp / rho, h)
    return r
