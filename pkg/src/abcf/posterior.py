"""Posterior variance, covariance, out-of-bag error and variable importance.

Three variance estimators are offered for a forest fitted on ``tau``:

``oob`` (default)
    forest weights applied to squared out-of-bag residuals,
    ``sum_t w_t (tau_t - oob_t)^2``;
``residual-forest``
    a second forest fitted on the squared out-of-bag residuals, evaluated at
    the query through its own weights;
``cdf``
    the variance of the weighted empirical distribution,
    ``sum_t w_t (tau_t - sum_u w_u tau_u)^2``.

Covariances between two transforms use three forests: one per transform to
get out-of-bag residuals, and a third fitted on their product.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _kernels
from ._seeding import derive_seed
from .forest import Forest, ForestConfig, _as_matrix, fit, resolve_response
from .qrf import _w
from .reftable import ReferenceTable

logger = logging.getLogger(__name__)

VARIANCE_METHODS = ("oob", "residual-forest", "cdf")


class OobWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class OobPredictions:
    values: np.ndarray
    defined_mask: np.ndarray

    @property
    def masked_fraction(self) -> float:
        return float(1.0 - self.defined_mask.mean())

    def residuals(self, responses) -> np.ndarray:
        return np.asarray(responses, dtype=float) - self.values


def oob_predict(forest: Forest, responses=None) -> OobPredictions:
    """Out-of-bag prediction of every training record (NaN where undefined)."""
    if responses is not None and np.shape(responses) != (forest.n_train,):
        raise ValueError(
            f"forest was trained on {forest.n_train} records, got {np.shape(responses)} responses"
        )
    checkpoints = np.array([forest.tree_count], dtype=np.int64)
    pred, nobs = _kernels.oob_running(forest.train_leaf, forest.counts, forest.offsets, forest.value, checkpoints)
    mask = nobs[0] > 0
    if not mask.all():
        logger.warning("%d training records are in-bag in every tree", int((~mask).sum()))
    return OobPredictions(pred[0], mask)


def oob_mse(forest: Forest) -> float:
    oob = oob_predict(forest)
    r = forest.responses - oob.values
    return float(np.mean(r[oob.defined_mask] ** 2))


def oob_mse_curve(forest: Forest, checkpoints: Sequence[int]) -> list[tuple[int, float]]:
    """OOB MSE using only the first b trees, for each b in ``checkpoints``."""
    cps = sorted(int(c) for c in checkpoints)
    if not cps or cps[0] < 1 or cps[-1] > forest.tree_count:
        raise ValueError(f"checkpoints must lie in [1, {forest.tree_count}]")
    uniq = np.array(sorted(set(cps)), dtype=np.int64)
    pred, nobs = _kernels.oob_running(forest.train_leaf, forest.counts, forest.offsets, forest.value, uniq)
    out = {}
    for i, b in enumerate(uniq):
        ok = nobs[i] > 0
        out[int(b)] = float(np.mean((forest.responses[ok] - pred[i, ok]) ** 2))
    return [(b, out[b]) for b in cps]


# ---------------------------------------------------------------------------
# variance


def variance_cdf(weights, responses) -> float:
    w = _w(weights)
    tau = np.asarray(responses, dtype=float)
    mean = np.dot(w, tau)
    return float(np.dot(w, (tau - mean) ** 2))


def _masked_weights(w: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if mask.all():
        return w
    lost = float(w[~mask].sum())
    kept = w * mask
    total = kept.sum()
    if total <= 0:
        raise ValueError("every record carrying weight has an undefined OOB prediction")
    if lost > 0:
        warnings.warn(f"renormalizing after dropping OOB-undefined weight mass {lost:.3g}", OobWarning)
    return kept / total


def variance_oob_weighted(weights, responses, oob: OobPredictions) -> float:
    w = _masked_weights(_w(weights), oob.defined_mask)
    r = np.where(oob.defined_mask, np.asarray(responses, dtype=float) - np.nan_to_num(oob.values), 0.0)
    return float(np.dot(w, r * r))


def second_stage_config(config: ForestConfig) -> ForestConfig:
    return replace(config, seed=derive_seed(config.seed, "second-stage"))


def fit_residual_forest(
    forest: Forest,
    oob: OobPredictions | None = None,
    config: ForestConfig | None = None,
    threads: int | None = None,
) -> Forest:
    """Forest on squared OOB residuals; records without OOB predictions are dropped."""
    oob = oob if oob is not None else oob_predict(forest)
    ok = oob.defined_mask
    r2 = (forest.responses[ok] - oob.values[ok]) ** 2
    cfg = second_stage_config(config or forest.config)
    return fit(forest.train_stats[ok], r2, cfg, forest.stat_names, f"sqres({forest.response_name})", threads)


def variance_residual_forest(
    forest: Forest,
    query,
    oob: OobPredictions | None = None,
    config: ForestConfig | None = None,
    residual_forest: Forest | None = None,
) -> float:
    rf = residual_forest or fit_residual_forest(forest, oob, config)
    w = rf.weights_matrix(_as_matrix(query, rf.n_stats))[0]
    v = float(np.dot(w, rf.responses))
    if v < 0.0:
        raise ArithmeticError(f"negative residual-forest variance {v}")
    return v


# ---------------------------------------------------------------------------
# covariance


@dataclass(eq=False)
class CovarianceForests:
    tau: Forest
    sigma: Forest
    product: Forest

    def predict(self, queries) -> np.ndarray:
        w = self.product.weights_matrix(queries)
        return w @ self.product.responses


def fit_covariance(
    table: ReferenceTable,
    tau,
    sigma,
    config: ForestConfig = ForestConfig(),
    threads: int | None = None,
    tau_forest: Forest | None = None,
    sigma_forest: Forest | None = None,
) -> CovarianceForests:
    """Fit the marginal forests (unless given) and the product-of-residuals forest."""
    X = table.stats
    ft = tau_forest or fit(X, resolve_response(table, tau)[1], config, table.stat_names, str(tau), threads)
    fs = sigma_forest or fit(X, resolve_response(table, sigma)[1], config, table.stat_names, str(sigma), threads)
    ot, os_ = oob_predict(ft), oob_predict(fs)
    ok = ot.defined_mask & os_.defined_mask
    prod = (ft.responses[ok] - ot.values[ok]) * (fs.responses[ok] - os_.values[ok])
    fp = fit(
        X[ok], prod, second_stage_config(config), table.stat_names,
        f"cov({ft.response_name},{fs.response_name})", threads,
    )
    return CovarianceForests(ft, fs, fp)


def covariance(table: ReferenceTable, query, tau, sigma, config: ForestConfig = ForestConfig()) -> float:
    return float(fit_covariance(table, tau, sigma, config).predict(_as_matrix(query, table.n_stats))[0])


# ---------------------------------------------------------------------------
# variable importance


@dataclass(frozen=True)
class ImportanceReport:
    names: tuple[str, ...]
    values: np.ndarray

    def as_pairs(self) -> list[tuple[str, float]]:
        return list(zip(self.names, (float(v) for v in self.values)))

    def rank(self, name: str) -> int:
        return self.names.index(name)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["statistic", "importance"])
            for n, v in self.as_pairs():
                out.writerow([n, repr(v)])


def importance_per_tree(forest: Forest) -> np.ndarray:
    """(B, k) RSS decrease accumulated per tree and covariate."""
    out = np.zeros((forest.tree_count, forest.n_stats))
    for b in range(forest.tree_count):
        tree = forest.tree(b)
        dec = tree.decrease()
        internal = tree.feature >= 0
        np.add.at(out[b], tree.feature[internal], dec[internal])
    return out


def variable_importance(forest: Forest) -> ImportanceReport:
    total = importance_per_tree(forest).sum(axis=0) / forest.tree_count
    order = np.lexsort((np.arange(total.size), -total))
    return ImportanceReport(tuple(forest.stat_names[j] for j in order), total[order])
