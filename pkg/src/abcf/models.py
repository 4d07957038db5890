"""Prior-predictive simulators and exact conjugate posteriors for the toy models.

Two models are built in:

* the hierarchical Normal mean model, ``y_i ~ N(theta1, theta2)``,
  ``theta1 | theta2 ~ N(0, theta2)``, ``theta2 ~ IG(4, 3)``;
* Zellner's g-prior regression, ``y ~ N_n(X beta, sigma2 I)``,
  ``beta | sigma2 ~ N_2(0, n sigma2 (X'X)^-1)``, ``sigma2 ~ IG(4, 3)``.

Both return :class:`~abcf.reftable.ReferenceTable` objects. Rows are produced
in fixed-size blocks, each with its own RNG stream keyed by ``(seed, block)``,
so a table of N rows is a prefix of any longer table from the same model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from ._seeding import block_rng, derive_seed
from .reftable import ReferenceTable

BLOCK_ROWS = 1024

PRIOR_SHAPE = 4.0
PRIOR_SCALE = 3.0

NORMAL_BASE_STATS = (
    "mean",
    "var",
    "mad",
    "sum_mean_var",
    "sum_mean_mad",
    "sum_var_mad",
    "prod_mean_var",
    "prod_mean_mad",
    "prod_var_mad",
    "sum_all",
    "prod_all",
)

ZELLNER_BASE_STATS = (
    "beta1_mle",
    "beta2_mle",
    "rss",
    "cov_y_x1",
    "corr_y_x1",
    "cov_y_x2",
    "corr_y_x2",
    "mean",
    "var",
    "median",
)


# ---------------------------------------------------------------------------
# exact posterior families


@dataclass(frozen=True)
class StudentT:
    """General t distribution T(df, loc, scale2); ``scale2`` is the squared scale."""

    df: float
    loc: float
    scale2: float
    kind: str = field(default="student-t", init=False)

    def mean(self) -> float:
        if self.df <= 1:
            raise ValueError("mean requires df > 1")
        return self.loc

    def var(self) -> float:
        if self.df <= 2:
            raise ValueError("variance requires df > 2")
        return self.scale2 * self.df / (self.df - 2.0)

    def quantile(self, alpha: float) -> float:
        return self.loc + np.sqrt(self.scale2) * stats.t.ppf(alpha, self.df)

    def pdf(self, x):
        s = np.sqrt(self.scale2)
        return stats.t.pdf((np.asarray(x) - self.loc) / s, self.df) / s

    def cdf(self, x):
        return stats.t.cdf((np.asarray(x) - self.loc) / np.sqrt(self.scale2), self.df)


def gamma_quantile(p: float, shape: float, tol: float = 1e-10) -> float:
    """Quantile of Gamma(shape, 1) by bracketed root-finding on P(shape, x)."""
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return 0.0
        if p == 1.0:
            return np.inf
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    hi = max(1.0, shape)
    while special.gammainc(shape, hi) < p:
        hi *= 2.0
    lo = 0.0
    # absolute xtol is tiny so that quantiles far below 1 still converge in relative terms
    x = optimize.brentq(
        lambda x: special.gammainc(shape, x) - p, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
        maxiter=1000,
    )
    if abs(special.gammainc(shape, x) - p) > tol:
        raise ArithmeticError(f"gamma quantile did not converge for p={p}, shape={shape}")
    return x


@dataclass(frozen=True)
class InverseGamma:
    """IG(shape, scale): density proportional to x^-(shape+1) exp(-scale/x)."""

    shape: float
    scale: float
    kind: str = field(default="inverse-gamma", init=False)

    def __post_init__(self):
        if self.scale <= 0 or self.shape <= 0:
            raise ValueError("inverse-gamma needs shape > 0 and scale > 0")

    def mean(self) -> float:
        if self.shape <= 1:
            raise ValueError("mean requires shape > 1")
        return self.scale / (self.shape - 1.0)

    def var(self) -> float:
        if self.shape <= 2:
            raise ValueError("variance requires shape > 2")
        k = self.shape
        return self.scale**2 / ((k - 1.0) ** 2 * (k - 2.0))

    def quantile(self, alpha: float) -> float:
        # X <= q  <=>  1/X >= 1/q, with scale/X ~ Gamma(shape, 1)
        return self.scale / gamma_quantile(1.0 - alpha, self.shape)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = (
                self.shape * np.log(self.scale)
                - special.gammaln(self.shape)
                - (self.shape + 1.0) * np.log(x)
                - self.scale / x
            )
        return np.where(x > 0, np.exp(logp), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x > 0, special.gammaincc(self.shape, self.scale / np.where(x > 0, x, 1.0)), 0.0)


@dataclass(frozen=True)
class MultivariateT:
    """Multivariate t with location ``loc``, scale matrix ``scale`` and ``df``."""

    df: float
    loc: np.ndarray
    scale: np.ndarray
    kind: str = field(default="multivariate-t-2d", init=False)

    def mean(self) -> np.ndarray:
        return np.asarray(self.loc)

    def cov(self) -> np.ndarray:
        if self.df <= 2:
            raise ValueError("covariance requires df > 2")
        return np.asarray(self.scale) * self.df / (self.df - 2.0)

    def marginal(self, i: int) -> StudentT:
        return StudentT(self.df, float(self.loc[i]), float(self.scale[i, i]))


ExactPosterior = StudentT | InverseGamma | MultivariateT


# ---------------------------------------------------------------------------
# Normal mean model


@dataclass(frozen=True)
class NormalToyModel:
    n: int = 10
    noise_dims: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("sample size n must be >= 2 so the sample variance exists")
        if self.noise_dims < 0:
            raise ValueError("noise_dims must be >= 0")

    param_names = ("theta1", "theta2")

    @property
    def stat_names(self) -> tuple[str, ...]:
        return NORMAL_BASE_STATS + tuple(f"noise{i}" for i in range(self.noise_dims))

    @property
    def n_stats(self) -> int:
        return len(NORMAL_BASE_STATS) + self.noise_dims

    def summarize(self, y: np.ndarray) -> np.ndarray:
        """Base summary statistics of datasets ``y`` (rows are datasets)."""
        y = np.atleast_2d(y)
        m = y.mean(axis=1)
        v = y.var(axis=1, ddof=1)
        med = np.median(y, axis=1)
        d = np.median(np.abs(y - med[:, None]), axis=1)
        return np.column_stack(
            [m, v, d, m + v, m + d, v + d, m * v, m * d, v * d, m + v + d, m * v * d]
        )

    def _block(self, rng: np.random.Generator, rows: int):
        theta2 = 1.0 / rng.gamma(PRIOR_SHAPE, 1.0 / PRIOR_SCALE, size=rows)
        theta1 = np.sqrt(theta2) * rng.standard_normal(rows)
        y = theta1[:, None] + np.sqrt(theta2)[:, None] * rng.standard_normal((rows, self.n))
        noise = rng.uniform(0.0, 1.0, size=(rows, self.noise_dims))
        return np.column_stack([theta1, theta2]), np.hstack([self.summarize(y), noise])

    def exact(self, stats_row) -> tuple[StudentT, InverseGamma]:
        """Exact marginal posteriors from a statistic row (uses mean and var)."""
        mean, var = float(stats_row[0]), float(stats_row[1])
        return normal_toy_exact_from_moments(self.n, mean, (self.n - 1) * var)


def _simulate(model, count: int):
    if count < 1:
        raise ValueError("count must be >= 1")
    params, stats_ = [], []
    for block, start in enumerate(range(0, count, BLOCK_ROWS)):
        rows = min(BLOCK_ROWS, count - start)
        # every block draws a full-size batch so a prefix is stable across counts
        p, s = model._block(block_rng(model.seed, block), BLOCK_ROWS)
        params.append(p[:rows])
        stats_.append(s[:rows])
    return ReferenceTable(model.param_names, model.stat_names, np.vstack(params), np.vstack(stats_))


def simulate_normal_toy(model: NormalToyModel, count: int) -> ReferenceTable:
    return _simulate(model, count)


def normal_toy_exact_from_moments(n: int, ybar: float, ss: float) -> tuple[StudentT, InverseGamma]:
    """Exact posteriors given n, the sample mean and the sum of squared deviations."""
    if n < 2:
        raise ValueError("n must be >= 2")
    t1 = StudentT(df=n + 8.0, loc=n * ybar / (n + 1.0), scale2=(ss + 6.0) / ((n + 1.0) * (n + 8.0)))
    t2 = InverseGamma(shape=n / 2.0 + PRIOR_SHAPE, scale=ss / 2.0 + PRIOR_SCALE)
    return t1, t2


def normal_toy_exact(y_sample) -> tuple[StudentT, InverseGamma]:
    y = np.asarray(y_sample, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("need at least two observations")
    ybar = y.mean()
    return normal_toy_exact_from_moments(y.size, ybar, float(np.sum((y - ybar) ** 2)))


# ---------------------------------------------------------------------------
# Zellner g-prior regression


def _check_design(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"design must be n x 2, got shape {X.shape}")
    xtx = X.T @ X
    cond = np.linalg.cond(xtx)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise np.linalg.LinAlgError(f"X'X is singular (condition number {cond:.3g})")
    return xtx


def correlated_design(n: int, seed: int) -> np.ndarray:
    """n x 2 design with standard normal columns of correlation 1/sqrt(2).

    With independent columns the posterior covariance of (beta1, beta2) is
    close to zero, which makes it useless as an estimation target.
    """
    z = np.random.default_rng(seed).standard_normal((n, 2))
    return np.column_stack([z[:, 0], (z[:, 0] + z[:, 1]) / np.sqrt(2.0)])


@dataclass(frozen=True, eq=False)
class ZellnerModel:
    n: int = 100
    noise_dims: int = 50
    seed: int = 0
    design: np.ndarray | None = None

    param_names = ("beta1", "beta2", "sigma2")

    def __post_init__(self):
        if self.noise_dims < 0:
            raise ValueError("noise_dims must be >= 0")
        X = self.design
        if X is None:
            X = correlated_design(self.n, derive_seed(self.seed, "zellner-design"))
        X = np.array(X, dtype=float)
        if X.shape[0] != self.n:
            raise ValueError(f"design has {X.shape[0]} rows but n = {self.n}")
        if self.n < 3:
            raise ValueError("n must be >= 3")
        xtx = _check_design(X)
        X.setflags(write=False)
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "_xtx", xtx)
        object.__setattr__(self, "_xtx_inv", np.linalg.inv(xtx))

    @property
    def stat_names(self) -> tuple[str, ...]:
        return ZELLNER_BASE_STATS + tuple(f"noise{i}" for i in range(self.noise_dims))

    @property
    def n_stats(self) -> int:
        return len(ZELLNER_BASE_STATS) + self.noise_dims

    def summarize(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        X = self.design
        n = self.n
        bhat = y @ X @ self._xtx_inv
        resid = y - bhat @ X.T
        rss = np.sum(resid**2, axis=1)
        yc = y - y.mean(axis=1, keepdims=True)
        xc = X - X.mean(axis=0)
        cov = yc @ xc / (n - 1)
        sy = yc.std(axis=1, ddof=1)
        sx = xc.std(axis=0, ddof=1)
        corr = cov / (sy[:, None] * sx[None, :])
        return np.column_stack(
            [
                bhat[:, 0],
                bhat[:, 1],
                rss,
                cov[:, 0],
                corr[:, 0],
                cov[:, 1],
                corr[:, 1],
                y.mean(axis=1),
                y.var(axis=1, ddof=1),
                np.median(y, axis=1),
            ]
        )

    def _block(self, rng: np.random.Generator, rows: int):
        sigma2 = 1.0 / rng.gamma(PRIOR_SHAPE, 1.0 / PRIOR_SCALE, size=rows)
        chol = np.linalg.cholesky(self.n * self._xtx_inv)
        beta = (rng.standard_normal((rows, 2)) @ chol.T) * np.sqrt(sigma2)[:, None]
        y = beta @ self.design.T + np.sqrt(sigma2)[:, None] * rng.standard_normal((rows, self.n))
        noise = rng.uniform(0.0, 1.0, size=(rows, self.noise_dims))
        return np.column_stack([beta, sigma2]), np.hstack([self.summarize(y), noise])

    def exact(self, stats_row) -> tuple[MultivariateT, InverseGamma]:
        """Exact posteriors from a statistic row (uses the MLEs and the RSS)."""
        bhat = np.array([stats_row[0], stats_row[1]], dtype=float)
        return _zellner_posterior(self.n, self._xtx, self._xtx_inv, bhat, float(stats_row[2]))


def simulate_zellner(model: ZellnerModel, count: int) -> ReferenceTable:
    return _simulate(model, count)


def _zellner_posterior(n, xtx, xtx_inv, bhat, rss):
    g = float(n)
    shrink = g / (g + 1.0)
    shape = PRIOR_SHAPE + n / 2.0
    # the g-prior contributes bhat' X'X bhat / (g + 1) to the sigma2 scale
    scale = PRIOR_SCALE + 0.5 * rss + 0.5 * float(bhat @ xtx @ bhat) / (g + 1.0)
    beta = MultivariateT(
        df=2.0 * shape,
        loc=shrink * bhat,
        scale=(scale / shape) * shrink * xtx_inv,
    )
    return beta, InverseGamma(shape, scale)


def zellner_exact(y, X) -> tuple[MultivariateT, InverseGamma]:
    """Exact posteriors of (beta1, beta2) and sigma2 for data ``y`` and design ``X``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    xtx = _check_design(X)
    xtx_inv = np.linalg.inv(xtx)
    bhat = xtx_inv @ (X.T @ y)
    resid = y - X @ bhat
    return _zellner_posterior(X.shape[0], xtx, xtx_inv, bhat, float(resid @ resid))
