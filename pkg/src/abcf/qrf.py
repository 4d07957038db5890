"""Quantile-forest weights and the posterior summaries derived from them.

For a query ``x`` the weight of training record ``t`` is

    w_t(x) = (1/B) sum_b n_b[t] * 1{t in leaf_b(x)} / |leaf_b(x)|

where ``|leaf_b(x)|`` counts bootstrap copies. The weights form a probability
vector over the training records and define a weighted empirical posterior.

The CDF here is right-continuous, ``F(x) = sum_t w_t 1{tau_t <= x}``, so that
inverting it always returns an observed training response.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .forest import Forest, _as_matrix


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Weights over the N training records for one query."""

    values: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values > 0)

    def as_dict(self) -> dict[int, float]:
        return {int(t): float(self.values[t]) for t in self.support}

    def __len__(self) -> int:
        return self.values.size


def weights(forest: Forest, query) -> WeightVector:
    x = _as_matrix(query, forest.n_stats)
    if x.shape[0] != 1:
        raise ValueError("weights() takes a single query; use weights_many()")
    return WeightVector(forest.weights_matrix(x)[0])


def weights_many(forest: Forest, queries) -> list[WeightVector]:
    return [WeightVector(row) for row in forest.weights_matrix(queries)]


def _w(weights) -> np.ndarray:
    return weights.values if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)


def expectation(weights, responses) -> float:
    w = _w(weights)
    return float(np.dot(w, np.asarray(responses, dtype=float)))


def _sorted_support(weights, responses):
    w = _w(weights)
    tau = np.asarray(responses, dtype=float)
    keep = w > 0
    w, tau = w[keep], tau[keep]
    order = np.argsort(tau, kind="stable")
    tau = tau[order]
    cum = np.cumsum(w[order])
    # normalize so the last value is exactly 1
    cum = cum / cum[-1]
    return tau, cum


def cdf(weights, responses, at: float) -> float:
    tau, cum = _sorted_support(weights, responses)
    i = np.searchsorted(tau, at, side="right")
    return 0.0 if i == 0 else float(cum[i - 1])


def quantile(weights, responses, alpha: float) -> float:
    """Smallest training response whose weighted CDF reaches ``alpha``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    tau, cum = _sorted_support(weights, responses)
    # cum is constant across ties in tau, so take the last index of each tie group
    last = np.r_[tau[1:] != tau[:-1], True]
    tau, cum = tau[last], cum[last]
    i = int(np.searchsorted(cum, alpha, side="left"))
    return float(tau[min(i, tau.size - 1)])


def quantiles(weights, responses, alphas) -> np.ndarray:
    return np.array([quantile(weights, responses, a) for a in alphas])


@dataclass(frozen=True)
class PosteriorSummary:
    """Point summaries of a one-dimensional approximate posterior."""

    mean: float
    variance: float
    quantiles: dict[float, float]

    def interval(self, lower: float, upper: float) -> tuple[float, float]:
        return self.quantiles[lower], self.quantiles[upper]


def summarize(weights, responses, alphas=(0.025, 0.05, 0.95, 0.975), variance: float | None = None) -> PosteriorSummary:
    """Mean, variance and quantiles of a weighted sample.

    ``variance`` overrides the weighted-distribution variance, e.g. with an
    out-of-bag estimate.
    """
    w = _w(weights)
    tau = np.asarray(responses, dtype=float)
    mean = float(np.dot(w, tau))
    if variance is None:
        variance = float(np.dot(w, (tau - mean) ** 2))
    return PosteriorSummary(mean, float(variance), {float(a): quantile(w, tau, a) for a in alphas})


def weighted_sample(weights, responses) -> tuple[np.ndarray, np.ndarray]:
    """(response, weight) pairs with positive weight, sorted by response."""
    w = _w(weights)
    tau = np.asarray(responses, dtype=float)
    keep = np.flatnonzero(w > 0)
    order = keep[np.argsort(tau[keep], kind="stable")]
    return tau[order], w[order]


def write_weighted_sample(path, weights, responses) -> None:
    tau, w = weighted_sample(weights, responses)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["response", "weight"])
        for a, b in zip(tau, w):
            out.writerow([repr(float(a)), repr(float(b))])
