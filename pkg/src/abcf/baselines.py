"""Classical ABC comparators: rejection and regression-adjusted rejection.

Distances are Euclidean on statistics scaled by their median absolute
deviation over the whole reference table. The adjusted methods fit a
kernel-weighted regression of the (optionally transformed) parameter on the
query-centred statistics of the accepted records and shift every accepted
value to the query; by default residuals are also rescaled by a fitted
log-squared-residual regression to correct for heteroscedasticity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .qrf import PosteriorSummary, quantile
from .reftable import ReferenceTable

DEFAULT_RIDGE_LAMBDAS = (1e-4, 1e-3, 1e-2)


class BaselineWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ToleranceSpec:
    p_eps: float

    def __post_init__(self):
        if not 0.0 < self.p_eps <= 1.0:
            raise ValueError(f"p_eps must lie in (0, 1], got {self.p_eps}")

    def accepted_count(self, n: int) -> int:
        # guard against 0.1 * 10000 = 1000.0000000000001
        m = math.ceil(round(self.p_eps * n, 9))
        if m < 2:
            raise ValueError(f"p_eps={self.p_eps} accepts fewer than 2 of {n} records")
        return m


@dataclass(frozen=True, eq=False)
class AcceptedSample:
    indices: np.ndarray          # sorted by distance
    distances: np.ndarray
    kernel_weights: np.ndarray   # Epanechnikov on distance / radius
    radius: float
    scaled_offsets: np.ndarray   # (m, k_eff) scaled statistics minus the scaled query


@dataclass(frozen=True, eq=False)
class AdjustedSample:
    values: np.ndarray
    weights: np.ndarray
    adjusted: bool = True


def stat_scales(table: ReferenceTable) -> np.ndarray:
    """Per-statistic MAD (normal-consistent); std where MAD is 0; 0 if constant."""
    x = table.stats
    scale = sps.median_abs_deviation(x, axis=0, scale="normal")
    zero = scale == 0
    if zero.any():
        scale = scale.copy()
        scale[zero] = x[:, zero].std(axis=0)
    return scale


def reject(
    table: ReferenceTable,
    query,
    tol: ToleranceSpec | float,
    scales: np.ndarray | None = None,
) -> AcceptedSample:
    tol = tol if isinstance(tol, ToleranceSpec) else ToleranceSpec(float(tol))
    q = np.asarray(getattr(query, "stats", query), dtype=float).ravel()
    if q.size != table.n_stats:
        raise ValueError(f"query has {q.size} statistics, table has {table.n_stats}")
    scales = stat_scales(table) if scales is None else np.asarray(scales, dtype=float)
    keep = scales > 0
    if not keep.all():
        dropped = [table.stat_names[j] for j in np.flatnonzero(~keep)]
        warnings.warn(f"dropping constant statistics from the distance: {dropped}", BaselineWarning)
    z = (table.stats[:, keep] - q[keep]) / scales[keep]
    dist = np.sqrt(np.einsum("ij,ij->i", z, z))
    m = tol.accepted_count(len(table))
    order = np.argsort(dist, kind="stable")
    radius = float(dist[order[m - 1]])
    acc = order[dist[order] <= radius]
    d = dist[acc]
    if radius > 0:
        kw = 1.0 - (d / radius) ** 2
    else:
        kw = np.ones_like(d)
    return AcceptedSample(acc, d, kw, radius, z[acc])


# ---------------------------------------------------------------------------
# parameter transforms


def _forward(values, transform, bounds):
    if transform == "none":
        return values.copy()
    if transform == "log":
        if np.any(values <= 0):
            raise ValueError("log transform needs positive parameter values")
        return np.log(values)
    if transform == "logit":
        a, b = bounds
        if np.any(values <= a) or np.any(values >= b):
            raise ValueError(f"logit transform needs values inside {bounds}")
        return np.log((values - a) / (b - values))
    raise ValueError(f"unknown transform {transform!r}")


def _backward(values, transform, bounds):
    if transform == "none":
        return values
    if transform == "log":
        return np.exp(values)
    a, b = bounds
    return a + (b - a) / (1.0 + np.exp(-values))


# ---------------------------------------------------------------------------
# weighted regressions; both return (prediction at the query, fitted, residuals)


def _independent_columns(A, tol=1e-7) -> np.ndarray:
    """Mask of columns not (numerically) spanned by the columns before them.

    Exactly collinear statistics, such as a sum of two other statistics, are
    dropped; fitted values do not depend on which member of a collinear set
    is kept, and keeping the earliest one leaves the intercept in place.
    """
    r = np.abs(np.diag(np.linalg.qr(A, mode="r")))
    norms = np.linalg.norm(A, axis=0)
    keep = np.zeros(A.shape[1], dtype=bool)
    keep[: r.size] = r > tol * np.where(norms > 0, norms, 1.0)
    return keep


def _wls(Z, y, w):
    A = np.column_stack([np.ones(len(y)), Z])
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    keep = _independent_columns(Aw)
    if not keep[0]:
        raise np.linalg.LinAlgError("weighted design has no usable intercept")
    coef, *_ = np.linalg.lstsq(Aw[:, keep], y * sw, rcond=None)
    fitted = A[:, keep] @ coef
    return coef[0], fitted, y - fitted


def _ridge(Z, y, w, lambdas):
    """Ridge on weighted-standardized covariates, lambda chosen by weighted GCV."""
    n = len(y)
    om = w * (n / w.sum())
    mz = om @ Z / n
    sd = np.sqrt(om @ (Z - mz) ** 2 / n)
    use = sd > 0
    Zs = (Z[:, use] - mz[use]) / sd[use]
    my = om @ y / n
    yc = y - my
    so = np.sqrt(om)
    U, d, Vt = np.linalg.svd(Zs * so[:, None], full_matrices=False)
    uty = U.T @ (yc * so)
    best = None
    for lam in lambdas:
        f = d / (d * d + lam)
        beta = Vt.T @ (f * uty)
        fitted = my + Zs @ beta
        resid = y - fitted
        df = 1.0 + float(np.sum(d * d / (d * d + lam)))
        gcv = (om @ resid**2 / n) / (1.0 - df / n) ** 2
        if best is None or gcv < best[0]:
            z0 = -mz[use] / sd[use]
            best = (gcv, my + z0 @ beta, fitted, resid)
    return best[1], best[2], best[3]


def _adjust(accepted, table, response, transform, heteroscedastic, bounds, regress):
    name_or_values = response
    if isinstance(name_or_values, str):
        tau = table.param(name_or_values)[accepted.indices]
    else:
        tau = np.asarray(name_or_values, dtype=float)[accepted.indices]
    Z = accepted.scaled_offsets
    w = accepted.kernel_weights
    m = len(tau)
    if m <= Z.shape[1] + 1:
        raise ValueError(f"{m} accepted records cannot fit a regression on {Z.shape[1]} statistics")
    if np.count_nonzero(w) <= Z.shape[1] + 1:
        w = np.ones(m)
    y = _forward(tau, transform, bounds)
    try:
        pred, _, resid = regress(Z, y, w)
    except np.linalg.LinAlgError as exc:
        warnings.warn(f"regression adjustment failed ({exc}); returning the rejection sample", BaselineWarning)
        return AdjustedSample(tau.copy(), w, adjusted=False)
    scale = max(float(np.max(np.abs(y))), 1.0)
    if heteroscedastic and np.max(np.abs(resid)) > 1e-10 * scale:
        r2 = resid**2
        floor = r2[r2 > 0].min()
        try:
            lpred, lfit, _ = regress(Z, np.log(np.maximum(r2, floor)), w)
            resid = resid * np.exp(0.5 * (lpred - lfit))
        except np.linalg.LinAlgError:
            warnings.warn("heteroscedastic correction skipped (singular design)", BaselineWarning)
    return AdjustedSample(_backward(pred + resid, transform, bounds), w)


def adjust_local_linear(
    accepted: AcceptedSample,
    table: ReferenceTable,
    response,
    transform: str = "none",
    heteroscedastic: bool = True,
    bounds: tuple[float, float] = (0.0, 1.0),
) -> AdjustedSample:
    return _adjust(accepted, table, response, transform, heteroscedastic, bounds, _wls)


def adjust_ridge(
    accepted: AcceptedSample,
    table: ReferenceTable,
    response,
    lambdas=DEFAULT_RIDGE_LAMBDAS,
    transform: str = "none",
    heteroscedastic: bool = True,
    bounds: tuple[float, float] = (0.0, 1.0),
) -> AdjustedSample:
    def regress(Z, y, w):
        return _ridge(Z, y, w, lambdas)

    return _adjust(accepted, table, response, transform, heteroscedastic, bounds, regress)


def rejection_sample(accepted: AcceptedSample, table: ReferenceTable, response) -> AdjustedSample:
    """Accepted parameter values with uniform weights."""
    if isinstance(response, str):
        tau = table.param(response)[accepted.indices]
    else:
        tau = np.asarray(response, dtype=float)[accepted.indices]
    return AdjustedSample(tau.copy(), np.ones(len(tau)), adjusted=False)


# ---------------------------------------------------------------------------
# summaries


def _normalized(sample) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(sample, AdjustedSample):
        v, w = sample.values, sample.weights
    else:
        v = np.asarray(sample, dtype=float).ravel()
        w = np.ones(v.size)
    if v.size == 0:
        raise ValueError("cannot summarize an empty sample")
    w = np.asarray(w, dtype=float)
    if w.sum() <= 0:
        w = np.ones(v.size)
    return v, w / w.sum()


def summarize_sample(sample, alphas=(0.025, 0.05, 0.95, 0.975)) -> PosteriorSummary:
    v, w = _normalized(sample)
    mean = float(w @ v)
    var = float(w @ (v - mean) ** 2)
    return PosteriorSummary(mean, var, {float(a): quantile(w, v, a) for a in alphas})


def weighted_covariance(a: AdjustedSample, b: AdjustedSample) -> float:
    """Kernel-weighted covariance of two adjusted samples over one accepted set."""
    if a.values.shape != b.values.shape:
        raise ValueError("samples must come from the same accepted set")
    _, w = _normalized(a)
    ma, mb = w @ a.values, w @ b.values
    return float(w @ ((a.values - ma) * (b.values - mb)))
