"""Benchmark harness: error metrics, method comparisons and hyperparameter sweeps.

A benchmark simulates a training table and an independent test table from one
of the built-in models, fits every requested method, and scores per-item
estimates of posterior expectations, variances, quantiles and covariances.

Truths come in two modes. ``oracle`` uses the exact conjugate posteriors;
``raw`` uses the simulated parameter of each test record, which only makes
sense for expectations. Credible-interval coverage is always measured against
the raw parameters. Every report row names the truth mode in its metric,
e.g. ``nmae@oracle``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines, posterior, qrf
from ._seeding import derive_seed
from .config import MethodSpec, RunConfig
from .forest import Forest, ForestConfig, train
from .models import (
    NormalToyModel,
    ZellnerModel,
    correlated_design,
    simulate_normal_toy,
    simulate_zellner,
)
from .reftable import ReferenceTable, add_noise_columns

logger = logging.getLogger(__name__)

ZERO_TRUTH = 1e-12


# ---------------------------------------------------------------------------
# metrics


def nmae_with_exclusions(estimates, truths) -> tuple[float, int]:
    """NMAE and the number of items dropped because ``|truth| < 1e-12``."""
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    if e.shape != t.shape:
        raise ValueError(f"estimates {e.shape} and truths {t.shape} are not aligned")
    keep = np.abs(t) >= ZERO_TRUTH
    excluded = int((~keep).sum())
    if not keep.any():
        return math.nan, excluded
    return float(np.mean(np.abs(e[keep] - t[keep]) / np.abs(t[keep]))), excluded


def nmae(estimates, truths) -> float:
    """Mean over items of ``|estimate - truth| / |truth|``."""
    return nmae_with_exclusions(estimates, truths)[0]


def ci_coverage_and_range(lower, upper, truths) -> tuple[float, float]:
    """Percentage of items with ``lower <= truth <= upper`` and the mean interval length."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    t = np.asarray(truths, dtype=float)
    if not lo.shape == hi.shape == t.shape:
        raise ValueError("lower, upper and truths must be aligned")
    crossed = np.flatnonzero(lo > hi)
    if crossed.size:
        i = int(crossed[0])
        raise ValueError(f"item {i}: lower bound {lo[i]} exceeds upper bound {hi[i]}")
    inside = (lo <= t) & (t <= hi)
    return 100.0 * float(inside.mean()), float(np.mean(hi - lo))


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class ReportRow:
    method: str
    tolerance: str
    target: str
    metric: str
    value: float


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    # per-item estimates keyed by (method, tolerance, target), and truths by target
    estimates: dict[tuple[str, str, str], np.ndarray] = field(default_factory=dict, repr=False)
    truths: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    raw: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def add(self, method, tolerance, target, metric, value) -> None:
        self.rows.append(ReportRow(method, tolerance, target, metric, float(value)))

    def value(self, method: str, target: str, metric: str, tolerance: str | None = None) -> float:
        hits = [
            r.value for r in self.rows
            if r.method == method and r.target == target and r.metric == metric
            and (tolerance is None or r.tolerance == tolerance)
        ]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match ({method}, {tolerance}, {target}, {metric})")
        return hits[0]

    def failures(self) -> list[ReportRow]:
        return [r for r in self.rows if r.metric.startswith("failed")]

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["method", "tolerance", "target", "metric", "value"])
        for r in self.rows:
            out.writerow([r.method, r.tolerance, r.target, r.metric, repr(r.value)])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [
            {**r.__dict__, "value": None if math.isnan(r.value) else r.value} for r in self.rows
        ]
        return json.dumps({"rows": rows}, indent=1, sort_keys=True) + "\n"

    def items_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["method", "tolerance", "target", "item", "estimate", "truth"])
        for (method, tol, target), est in self.estimates.items():
            truth = self.truths.get(target)
            for i, e in enumerate(est):
                t = "NA" if truth is None else repr(float(truth[i]))
                out.writerow([method, tol, target, i, repr(float(e)), t])
        return buf.getvalue()

    def write(self, directory, stem: str = "report") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.csv").write_text(self.to_csv())
        (d / f"{stem}.json").write_text(self.to_json())
        (d / f"{stem}.items.csv").write_text(self.items_csv())


# ---------------------------------------------------------------------------
# data


def build_model(config: RunConfig, role: str):
    """Model instance for the ``train`` or ``test`` table; both share one design."""
    spec = config.model
    seed = derive_seed(config.seed, "simulate", role)
    if spec.kind == "normal":
        return NormalToyModel(n=spec.sample_size, noise_dims=spec.noise_dims, seed=seed)
    design = correlated_design(spec.sample_size, derive_seed(config.seed, "design"))
    return ZellnerModel(n=spec.sample_size, noise_dims=spec.noise_dims, seed=seed, design=design)


def simulate_tables(config: RunConfig) -> tuple[ReferenceTable, ReferenceTable]:
    out = []
    for role, count in (("train", config.sizes.train), ("test", config.sizes.test)):
        model = build_model(config, role)
        sim = simulate_normal_toy if isinstance(model, NormalToyModel) else simulate_zellner
        table = sim(model, count)
        if config.model.extra_noise:
            table = add_noise_columns(table, config.model.extra_noise, derive_seed(config.seed, "extra-noise", role))
        out.append(table)
    return out[0], out[1]


def _qlabel(alpha: float) -> str:
    return f"Q{alpha:g}"


def exact_targets(config: RunConfig, test: ReferenceTable) -> dict[str, np.ndarray]:
    """Exact posterior values of every target quantity for each test record."""
    config = config.resolved()
    model = build_model(config, "test")
    cols: dict[str, list[float]] = {}

    def put(name, v):
        cols.setdefault(name, []).append(float(v))

    for row in test.stats:
        first, second = model.exact(row)
        if isinstance(model, NormalToyModel):
            marg = {"theta1": first, "theta2": second}
        else:
            marg = {"beta1": first.marginal(0), "beta2": first.marginal(1), "sigma2": second}
            cov = first.cov()
        for p in config.targets:
            d = marg[p]
            put(f"E({p})", d.mean())
            put(f"Var({p})", d.var())
            for a in config.quantiles:
                put(f"{_qlabel(a)}({p})", d.quantile(a))
        for a, b in config.covariances:
            i, j = model.param_names.index(a), model.param_names.index(b)
            put(f"Cov({a},{b})", cov[i, j] if i < 2 and j < 2 else math.nan)
    return {k: np.array(v) for k, v in cols.items()}


# ---------------------------------------------------------------------------
# methods


def forest_config(config: RunConfig, *labels) -> ForestConfig:
    f = config.forest
    return ForestConfig(f.trees, f.mtry, f.min_node_size, derive_seed(config.seed, "forest", *labels))


def fit_forests(config: RunConfig, table: ReferenceTable, threads=None) -> dict[str, Forest]:
    config = config.resolved()
    names = list(config.targets)
    for pair in config.covariances:
        names += [p for p in pair if p not in names]
    return {p: train(table, p, forest_config(config, p), threads) for p in names}


def _rf_estimates(config, tr, te, forests, threads) -> dict[str, np.ndarray]:
    out = {}
    X = te.stats
    for p in config.targets:
        f = forests[p]
        W = f.weights_matrix(X)
        tau = f.responses
        out[f"E({p})"] = W @ tau
        oob = None
        by_method = {}
        for vm in config.variance_methods:
            if vm == "oob":
                oob = oob or posterior.oob_predict(f)
                v = np.array([posterior.variance_oob_weighted(w, tau, oob) for w in W])
            elif vm == "cdf":
                v = np.array([posterior.variance_cdf(w, tau) for w in W])
            else:
                oob = oob or posterior.oob_predict(f)
                rf2 = posterior.fit_residual_forest(f, oob, threads=threads)
                v = rf2.weights_matrix(X) @ rf2.responses
            by_method[vm] = v
        out[f"Var({p})"] = by_method[config.variance_methods[0]]
        for vm, v in by_method.items():
            out[f"Var[{vm}]({p})"] = v
        for a in config.quantiles:
            out[f"{_qlabel(a)}({p})"] = np.array([qrf.quantile(w, tau, a) for w in W])
    for a, b in config.covariances:
        cf = posterior.fit_covariance(
            tr, a, b, forest_config(config, "cov", a, b), threads,
            tau_forest=forests[a], sigma_forest=forests[b],
        )
        out[f"Cov({a},{b})"] = cf.predict(X)
    return out


def _baseline_estimates(config, method: MethodSpec, tr, te) -> dict[str, np.ndarray]:
    scales = baselines.stat_scales(tr)
    cols: dict[str, list[float]] = {}
    transforms = config.transforms
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", baselines.BaselineWarning)
        for q in te.stats:
            acc = baselines.reject(tr, q, method.tolerance, scales)
            samples = {}
            needed = list(config.targets)
            for pair in config.covariances:
                needed += [p for p in pair if p not in needed]
            for p in needed:
                tf = transforms.get(p, "none")
                bounds = config.bounds.get(p, (0.0, 1.0))
                if method.name == "reject":
                    s = baselines.rejection_sample(acc, tr, p)
                elif method.name == "loclinear":
                    s = baselines.adjust_local_linear(acc, tr, p, tf, method.heteroscedastic, bounds)
                else:
                    s = baselines.adjust_ridge(acc, tr, p, method.lambdas, tf, method.heteroscedastic, bounds)
                samples[p] = s
            for p in config.targets:
                sm = baselines.summarize_sample(samples[p], config.quantiles)
                cols.setdefault(f"E({p})", []).append(sm.mean)
                cols.setdefault(f"Var({p})", []).append(sm.variance)
                for a in config.quantiles:
                    cols.setdefault(f"{_qlabel(a)}({p})", []).append(sm.quantiles[a])
            for a, b in config.covariances:
                cols.setdefault(f"Cov({a},{b})", []).append(baselines.weighted_covariance(samples[a], samples[b]))
    if caught:
        logger.info("%s: %d baseline warnings (first: %s)", method.name, len(caught), caught[0].message)
    return {k: np.array(v) for k, v in cols.items()}


# ---------------------------------------------------------------------------
# benchmark


def _score(report: EvalReport, config: RunConfig, method: MethodSpec, est: dict[str, np.ndarray]) -> None:
    tol = method.tolerance_label
    mode = config.truth
    for target, values in est.items():
        report.estimates[(method.name, tol, target)] = values
        # "Var[cdf](theta1)" is scored against the truth of "Var(theta1)"
        truth = report.truths.get(re.sub(r"\[[^\]]*\]", "", target))
        if truth is None:
            continue
        err, excluded = nmae_with_exclusions(values, truth)
        report.add(method.name, tol, target, f"nmae@{mode}", err)
        if excluded:
            report.add(method.name, tol, target, f"excluded@{mode}", excluded)
    qs = config.quantiles
    if len(qs) >= 2:
        lo_a, hi_a = qs[0], qs[-1]
        for p in config.targets:
            lo = est.get(f"{_qlabel(lo_a)}({p})")
            hi = est.get(f"{_qlabel(hi_a)}({p})")
            if lo is None or hi is None:
                continue
            cover, length = ci_coverage_and_range(lo, hi, report.raw[p])
            label = f"CI[{lo_a:g},{hi_a:g}]({p})"
            report.add(method.name, tol, label, "coverage@raw", cover)
            report.add(method.name, tol, label, "length@raw", length)


def evaluate(
    config: RunConfig,
    train_table: ReferenceTable,
    test_table: ReferenceTable,
    forests: dict[str, Forest] | None = None,
    threads: int | None = None,
) -> EvalReport:
    """Score every configured method on given tables; forests may be supplied pre-fitted."""
    config = config.resolved()
    report = EvalReport()
    report.raw = {p: test_table.param(p).copy() for p in config.model.param_names}
    exact = exact_targets(config, test_table)
    if config.truth == "oracle":
        report.truths = exact
    else:
        report.truths = {f"E({p})": report.raw[p] for p in config.targets}

    for method in config.methods:
        try:
            if method.name == "rf":
                fs = forests if forests is not None else fit_forests(config, train_table, threads)
                est = _rf_estimates(config, train_table, test_table, fs, threads)
                for p in config.targets:
                    report.add("rf", "NA", p, "oob_mse@oob", posterior.oob_mse(fs[p]))
            elif method.name == "exact":
                est = exact
            else:
                est = _baseline_estimates(config, method, train_table, test_table)
            _score(report, config, method, est)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            logger.error("method %s failed: %s", method.name, exc)
            report.add(method.name, method.tolerance_label, type(exc).__name__, "failed", math.nan)
    return report


def run_benchmark(config: RunConfig, output_dir=None, threads: int | None = None) -> EvalReport:
    """Simulate train and test tables, fit all methods and score them."""
    config = config.resolved()
    train_table, test_table = simulate_tables(config)
    report = evaluate(config, train_table, test_table, threads=threads)
    if output_dir is not None:
        report.write(output_dir)
        config.write_resolved(output_dir)
    return report


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("table_size", "tree_count", "min_node_size")


@dataclass
class SweepResult:
    axis: str
    values: list[int]
    reports: list[EvalReport]

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow([self.axis, "method", "tolerance", "target", "metric", "value"])
        for v, rep in zip(self.values, self.reports):
            for r in rep.rows:
                out.writerow([v, r.method, r.tolerance, r.target, r.metric, repr(r.value)])
        return buf.getvalue()

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"sweep_{self.axis}.csv").write_text(self.to_csv())


def sweep(
    config: RunConfig,
    axis: str,
    values: Sequence[int],
    threads: int | None = None,
    tables: tuple[ReferenceTable, ReferenceTable] | None = None,
) -> SweepResult:
    """One report per axis value; the test table is shared across values.

    Table sizes use nested prefixes of one simulated table. Tree counts reuse
    the first trees of a single forest, which equals training each size anew.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = [int(v) for v in values]
    if not values or min(values) < 1:
        raise ValueError("sweep values must be positive integers")
    config = config.resolved()
    if axis == "table_size":
        config = config.model_copy(update={"sizes": config.sizes.model_copy(update={"train": max(values)})})
    if axis == "tree_count":
        config = config.model_copy(update={"forest": config.forest.model_copy(update={"trees": max(values)})})
    train_table, test_table = tables if tables is not None else simulate_tables(config)
    if axis == "table_size" and len(train_table) < max(values):
        raise ValueError(f"training table has {len(train_table)} rows, fewer than {max(values)}")

    big = fit_forests(config, train_table, threads) if axis == "tree_count" else None
    reports = []
    for v in values:
        if axis == "table_size":
            cfg = config.model_copy(update={"sizes": config.sizes.model_copy(update={"train": v})})
            reports.append(evaluate(cfg, train_table.head(v), test_table, threads=threads))
        elif axis == "tree_count":
            cfg = config.model_copy(update={"forest": config.forest.model_copy(update={"trees": v})})
            fs = {p: f.first(v) for p, f in big.items()}
            reports.append(evaluate(cfg, train_table, test_table, forests=fs, threads=threads))
        else:
            cfg = config.model_copy(update={"forest": config.forest.model_copy(update={"min_node_size": v})})
            reports.append(evaluate(cfg, train_table, test_table, threads=threads))
    return SweepResult(axis, values, reports)


def write_oob_curve(path, curve: Sequence[tuple[int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["b", "mse"])
        for b, mse in curve:
            out.writerow([b, repr(float(mse))])
