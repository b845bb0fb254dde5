"""Scaled SVD of the predictor panel and the spectral shrinkage of each forecast.

All three forecasts can be written as

    yhat = sum_i w_i * (v_i' x_new) * (u_i' y) / (sqrt(N T) * d_i)

where ``(u_i, d_i, v_i)`` is the SVD of ``Z = X / sqrt(N T)``. The vector
``w`` is the shrinkage profile: an indicator for PCA (hard thresholding) and
smooth weights in ``(0, 1)`` for ridge and random projections (soft
thresholding). This module computes those profiles, together with Monte
Carlo estimators and analytic bounds for the random-projection weights.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _rng
from .exceptions import DataError, NumericalError, ParameterError, SingularDesignError

#: Regenerations allowed per draw before a singular projected Gram matrix is fatal.
MAX_RETRIES = 100
#: Relative pivot size below which a triangular factor is treated as singular.
SINGULAR_TOL = 1e-10


@dataclass(frozen=True)
class PanelMatrix:
    """A T x N predictor panel, rows are time and columns are series."""

    values: np.ndarray
    columns: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"panel must be 2-D, got shape {values.shape}")
        if values.shape[0] < 2 or values.shape[1] < 1:
            raise DataError(f"panel needs at least 2 rows and 1 column, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("panel contains non-finite entries")
        if self.columns and len(self.columns) != values.shape[1]:
            raise DataError("column metadata does not match the panel width")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]


def as_panel(x):
    return x if isinstance(x, PanelMatrix) else PanelMatrix(x)


@dataclass(frozen=True)
class ScaledSVD:
    """Thin SVD ``X / sqrt(N T) = u @ diag(d) @ v.T`` with ``m = min(T, N)``."""

    u: np.ndarray
    d: np.ndarray
    v: np.ndarray
    n_rows: int
    n_cols: int

    @property
    def m(self):
        return self.d.shape[0]

    @property
    def scale(self):
        """``sqrt(N T)``, the factor between ``X`` and ``Z``."""
        return float(np.sqrt(self.n_rows * self.n_cols))

    def numerical_rank(self, rtol=1e-12):
        if self.d[0] <= 0:
            return 0
        return int(np.sum(self.d > rtol * self.d[0]))

    def split(self, r):
        """``(U_r, D_r, V_r)``: the leading ``r`` singular triplets."""
        return self.u[:, :r], self.d[:r], self.v[:, :r]


def scaled_svd(x):
    """Thin SVD of ``Z = X / sqrt(N T)`` with a deterministic sign convention.

    In each column of ``v`` the entry of largest magnitude is made
    non-negative and the matching column of ``u`` is flipped with it.

    Raises
    ------
    DataError
        If ``x`` has non-finite entries or fewer than 2 rows.
    NumericalError
        If LAPACK fails to converge with both drivers.
    """
    panel = as_panel(x)
    t, n = panel.values.shape
    z = panel.values / np.sqrt(n * t)
    try:
        u, d, vt = scipy.linalg.svd(z, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        try:
            u, d, vt = scipy.linalg.svd(z, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD did not converge: {exc}") from exc
    v = vt.T
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.where(v[pivot, np.arange(v.shape[1])] < 0, -1.0, 1.0)
    return ScaledSVD(u=u * signs, d=d, v=v * signs, n_rows=t, n_cols=n)


@dataclass(frozen=True)
class ShrinkageProfile:
    """Per-direction weights ``w_i`` applied to the empirical eigenvalues."""

    weights: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    se: np.ndarray = None


def pca_shrinkage(svd, r):
    """Hard thresholding: weight 1 on the first ``r`` directions, 0 after."""
    if not 1 <= r <= svd.m:
        raise ParameterError(f"r must lie in [1, {svd.m}], got {r}")
    weights = (np.arange(svd.m) < r).astype(float)
    return ShrinkageProfile(weights, "pca", {"r": int(r)})


def ridge_weights(d, k):
    d2 = np.asarray(d, dtype=float) ** 2
    return d2 / (d2 + 1.0 / k)


def ridge_shrinkage(svd, k):
    """Soft thresholding by the ridge penalty ``N T / k``.

    Substituting the SVD into ``X (X'X + (NT/k) I)^-1 X'`` gives
    ``U diag(d^2 / (d^2 + 1/k)) U'``.
    """
    if not k > 0:
        raise ParameterError(f"ridge k must be positive, got {k}")
    return ShrinkageProfile(ridge_weights(svd.d, k), "ridge", {"k": float(k)})


# -- random projections ------------------------------------------------------


def _projection_draw(rng, z, k):
    """One Gaussian ``R`` (N x k) and ``R (R' Z'Z R)^-1 R'`` for it.

    Returns ``(R, B)`` with ``B = R @ inv(Rq)`` where ``Z R = Q Rq``, so the
    projected inverse equals ``B @ B.T``. Returns ``None`` for a singular draw.
    """
    n = z.shape[1]
    r = rng.standard_normal((k, n)).T
    rq = np.linalg.qr(z @ r, mode="r")
    diag = np.abs(np.diag(rq))
    if diag.min() <= SINGULAR_TOL * diag.max():
        return None
    b = scipy.linalg.solve_triangular(rq, r.T, trans="T").T
    return r, b


def _regenerating(draw_fn, what):
    """Call ``draw_fn`` until it returns a non-singular draw."""
    for attempt in range(MAX_RETRIES + 1):
        out = draw_fn()
        if out is not None:
            return out, attempt
    raise SingularDesignError(
        f"{what}: singular draw persisted after {MAX_RETRIES} regenerations", retries=MAX_RETRIES
    )


@dataclass(frozen=True)
class ProjectionMoments:
    """Monte Carlo mean and standard error of ``R (R' Z'Z R)^-1 R'``."""

    mean: np.ndarray
    se: np.ndarray
    draws: int
    regenerated: int


def projection_moments(z, k, draws, seed, rotate=None):
    """Estimate ``E_R[R (R' Z'Z R)^-1 R']`` for Gaussian ``R`` (N x k).

    Draw ``j`` uses the stream ``(seed, j)``; singular draws are regenerated
    from the same stream. Standard errors are per-entry sample standard
    deviations over draws divided by ``sqrt(draws)``. With ``rotate`` given
    the moments of ``rotate @ M @ rotate.T`` are returned instead.
    """
    z = np.asarray(z, dtype=float)
    seed = _rng.check_seed(seed)
    if not 1 <= k <= z.shape[1]:
        raise ParameterError(f"k must lie in [1, {z.shape[1]}], got {k}")
    if draws < 2:
        raise ParameterError("at least two draws are needed for a standard error")
    n = z.shape[1]
    total = np.zeros((n, n))
    total_sq = np.zeros((n, n))
    regenerated = 0
    for j in range(draws):
        rng = _rng.stream(seed, j)
        (_, b), retries = _regenerating(lambda: _projection_draw(rng, z, k), "projection_moments")
        regenerated += retries
        if rotate is not None:
            b = rotate @ b
        m = b @ b.T
        total += m
        total_sq += m * m
    mean = total / draws
    var = np.maximum(total_sq - draws * mean * mean, 0.0) / (draws - 1)
    return ProjectionMoments(mean, np.sqrt(var / draws), draws, regenerated)


def _diag_weight_draws(d, k, draws, seed):
    """Per-draw diagonal of ``D R (R' D^2 R)^-1 R' D``, shape (draws, m)."""
    m = d.shape[0]
    out = np.empty((draws, m))
    regenerated = 0
    for j in range(draws):
        rng = _rng.stream(seed, j)

        def draw():
            r = rng.standard_normal((k, m)).T
            q, rq = np.linalg.qr(d[:, None] * r)
            diag = np.abs(np.diag(rq))
            if diag.min() <= SINGULAR_TOL * diag.max():
                return None
            return np.einsum("ij,ij->i", q, q)

        out[j], retries = _regenerating(draw, "rp_shrinkage_mc")
        regenerated += retries
    return out, regenerated


def rp_shrinkage_mc(svd, k, draws, seed):
    """Monte Carlo random-projection weights ``w_i = e_i' D E[R(R'D^2R)^-1 R'] D e_i``.

    Each draw's weights are the diagonal of the orthogonal projection onto
    the column space of ``D R``, so every draw lies in ``[0, 1]``.

    Parameters
    ----------
    svd : ScaledSVD or array_like
        The decomposition, or directly the singular values ``d``.
    k : int
        Subspace dimension, ``1 <= k <= m``.
    draws : int
        Number of Gaussian projections (at least 2).
    seed : int
        Draw ``j`` uses the stream ``(seed, j)``.

    Returns
    -------
    ShrinkageProfile
        ``weights`` holds the Monte Carlo mean, ``se`` the standard errors;
        ``params['regenerated']`` counts singular draws that were replaced.
    """
    d = np.asarray(svd.d if isinstance(svd, ScaledSVD) else svd, dtype=float)
    seed = _rng.check_seed(seed)
    m = d.shape[0]
    if not 1 <= k <= m:
        raise ParameterError(f"k must lie in [1, {m}], got {k}")
    if draws < 2:
        raise ParameterError("at least two draws are needed for a standard error")
    w, regenerated = _diag_weight_draws(d, k, draws, seed)
    se = w.std(axis=0, ddof=1) / np.sqrt(draws)
    params = {"k": int(k), "draws": int(draws), "seed": seed, "regenerated": regenerated}
    return ShrinkageProfile(w.mean(axis=0), "rp", params, se)


def rp_weight_bounds(d_squared, k, i, allow_trivial_upper=False):
    """Analytic lower and upper bounds on the random-projection weight ``w_i``.

    ``d_squared`` holds the squared singular values (the diagonal of
    ``D^2``), sorted non-increasingly and strictly positive; ``i`` is a
    zero-based index. With ``s_i = sum_{j != i} d_j``:

        lower = 1 - 1 / (1 + (k - 2) d_i / s_i)            (0 when k <= 2)
        upper = 1 - 1 / (1 + (d_i / d_m) k / (m - k - 2))

    The upper bound needs ``k < m - 2``. With ``allow_trivial_upper`` the
    trivial projection bound ``1`` is returned instead of raising.
    """
    d = np.asarray(d_squared, dtype=float)
    m = d.shape[0]
    if d.ndim != 1 or m < 1:
        raise ParameterError("d_squared must be a non-empty vector")
    if np.any(d <= 0) or np.any(np.diff(d) > 0):
        raise ParameterError("d_squared must be positive and non-increasing")
    if not 0 <= i < m:
        raise ParameterError(f"index {i} out of range for m={m}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if k >= m - 2 and not allow_trivial_upper:
        raise ParameterError(f"upper bound requires k < m - 2 (k={k}, m={m})")
    rest = d.sum() - d[i]
    if k <= 2:
        # E[1 / r'r] is infinite for k <= 2 and the Jensen step gives 0.
        lower = 0.0
    elif rest == 0:
        lower = 1.0
    else:
        lower = 1.0 - 1.0 / (1.0 + (k - 2) * d[i] / rest)
    if k >= m - 2:
        upper = 1.0
    else:
        ratio = (d[i] / d[-1]) * k / (m - k - 2)
        upper = 1.0 - 1.0 / (1.0 + ratio)
    return lower, upper


@dataclass(frozen=True)
class OffDiagonalCheck:
    max_abs: float
    se_at_max: float
    max_z: float
    passed: bool
    moments: ProjectionMoments


def offdiag_nullity_check(svd, k, draws, seed, n_se=4.0):
    """Check that ``E_R[R (R' D^2 R)^-1 R']`` is diagonal.

    Every off-diagonal Monte Carlo entry must lie within ``n_se`` standard
    errors of zero. ``max_abs`` and ``se_at_max`` describe the entry of
    largest magnitude; ``max_z`` is the largest ``|entry| / se``.
    """
    d = np.asarray(svd.d if isinstance(svd, ScaledSVD) else svd, dtype=float)
    moments = projection_moments(np.diag(d), k, draws, seed)
    off = ~np.eye(d.shape[0], dtype=bool)
    if not off.any():
        return OffDiagonalCheck(0.0, 0.0, 0.0, True, moments)
    vals = np.abs(moments.mean[off])
    ses = moments.se[off]
    at = int(np.argmax(vals))
    z = np.divide(vals, ses, out=np.zeros_like(vals), where=ses > 0)
    z[(ses == 0) & (vals > 0)] = np.inf
    max_z = float(z.max())
    return OffDiagonalCheck(float(vals[at]), float(ses[at]), max_z, max_z <= n_se, moments)


@dataclass(frozen=True)
class SwitchCheck:
    direct: ProjectionMoments
    rotated_mean: np.ndarray
    rotated_se: np.ndarray
    max_z: float
    passed: bool


def expectation_switch_check(z, k, draws, seed, n_se=4.0):
    """Compare ``E[R(R'Z'ZR)^-1 R']`` with ``V E[R(R'D'DR)^-1 R'] V'``.

    The two sides are estimated from independent streams; the difference is judged against the combined
    standard error. ``V`` is completed to a full orthogonal basis when
    ``N > T``.
    """
    z = np.asarray(z, dtype=float)
    n = z.shape[1]
    seed = _rng.check_seed(seed)
    _, d, vt = scipy.linalg.svd(z, full_matrices=True)
    dd = np.zeros((n, n))
    dd[: d.shape[0], : d.shape[0]] = np.diag(d)
    v = vt.T
    direct = projection_moments(z, k, draws, _rng.derived_seed(seed, 0))
    rotated = projection_moments(dd, k, draws, _rng.derived_seed(seed, 1), rotate=v)
    rot_mean, rot_se = rotated.mean, rotated.se
    combined = np.sqrt(direct.se**2 + rot_se**2)
    diff = np.abs(direct.mean - rot_mean)
    zscore = np.divide(diff, combined, out=np.zeros_like(diff), where=combined > 0)
    max_z = float(zscore.max())
    return SwitchCheck(direct, rot_mean, rot_se, max_z, max_z <= n_se)
