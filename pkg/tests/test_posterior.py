import csv

import numpy as np
import pytest

from abcf import posterior
from abcf.forest import ForestConfig, fit, train
from abcf.models import NormalToyModel, simulate_normal_toy
from abcf.reftable import ReferenceTable


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(400, 4))
    y = 2 * X[:, 0] + rng.normal(scale=0.5, size=400)
    return X, y, fit(X, y, ForestConfig(tree_count=60, seed=1), threads=1)


def test_oob_predictions_use_only_out_of_bag_trees(data):
    X, y, f = data
    oob = posterior.oob_predict(f)
    for t in (0, 7, 123):
        trees = [b for b in range(f.tree_count) if f.counts[b, t] == 0]
        manual = np.mean([f.tree(b).value[f.train_leaf[b, t]] for b in trees])
        assert oob.values[t] == pytest.approx(manual, abs=1e-12)
    assert oob.defined_mask.all()


def test_oob_undefined_when_always_in_bag():
    X = np.arange(6.0).reshape(-1, 1)
    f = fit(X, np.arange(6.0), ForestConfig(tree_count=1, seed=0), threads=1)
    oob = posterior.oob_predict(f)
    inbag = f.counts[0] > 0
    assert np.all(np.isnan(oob.values[inbag]))
    assert np.array_equal(oob.defined_mask, ~inbag)


def test_oob_mse_curve_matches_prefix_forests(data):
    X, y, f = data
    curve = dict(posterior.oob_mse_curve(f, [10, 30, 60]))
    assert curve[60] == pytest.approx(posterior.oob_mse(f))
    assert curve[10] == pytest.approx(posterior.oob_mse(f.first(10)))
    with pytest.raises(ValueError):
        posterior.oob_mse_curve(f, [61])


def test_variance_methods_agree_on_a_homoscedastic_problem(data):
    X, y, f = data
    Q = np.random.default_rng(2).normal(size=(30, 4)) * 0.5
    W = f.weights_matrix(Q)
    oob = posterior.oob_predict(f)
    v1 = np.array([posterior.variance_oob_weighted(w, y, oob) for w in W])
    v3 = np.array([posterior.variance_cdf(w, y) for w in W])
    rf2 = posterior.fit_residual_forest(f, oob)
    v2 = np.array([posterior.variance_residual_forest(f, q, residual_forest=rf2) for q in Q])
    for v in (v1, v2, v3):
        assert np.all(v >= 0)
        # noise variance is 0.25; forests over-disperse but stay in range
        assert 0.1 < np.median(v) < 1.5


def test_variance_cdf_formula():
    w = np.array([0.25, 0.25, 0.5])
    tau = np.array([0.0, 2.0, 4.0])
    assert posterior.variance_cdf(w, tau) == pytest.approx(0.25 * 6.25 + 0.25 * 0.25 + 0.5 * 2.25)


def test_masked_oob_weights_renormalize_with_warning():
    oob = posterior.OobPredictions(np.array([1.0, np.nan, 3.0]), np.array([True, False, True]))
    with pytest.warns(posterior.OobWarning):
        v = posterior.variance_oob_weighted(np.array([0.5, 0.25, 0.25]), np.array([2.0, 0.0, 1.0]), oob)
    assert v == pytest.approx((0.5 * 1.0 + 0.25 * 4.0) / 0.75)
    with pytest.raises(ValueError):
        posterior.variance_oob_weighted(np.array([0.0, 1.0, 0.0]), np.zeros(3), oob)


def test_residual_forest_seed_is_derived(data):
    X, y, f = data
    cfg = posterior.second_stage_config(f.config)
    assert cfg.seed != f.config.seed and cfg.tree_count == f.config.tree_count


def test_covariance_of_independent_responses_is_small():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(600, 3))
    params = np.column_stack([X[:, 0] + rng.normal(size=600), X[:, 1] + rng.normal(size=600)])
    table = ReferenceTable(("a", "b"), ("x0", "x1", "x2"), params, X)
    cf = posterior.fit_covariance(table, "a", "b", ForestConfig(tree_count=40, seed=3))
    est = cf.predict(rng.normal(size=(20, 3)) * 0.5)
    assert abs(np.mean(est)) < 0.25
    # perfectly dependent responses: covariance equals the variance
    table2 = ReferenceTable(("a", "b"), ("x0", "x1", "x2"), np.column_stack([params[:, 0]] * 2), X)
    cf2 = posterior.fit_covariance(table2, "a", "b", ForestConfig(tree_count=40, seed=3))
    assert np.all(cf2.predict(X[:10]) >= 0)


def test_covariance_reuses_given_forests():
    table = simulate_normal_toy(NormalToyModel(seed=2, noise_dims=2), 500)
    cfg = ForestConfig(tree_count=10, seed=1)
    ft = train(table, "theta1", cfg)
    fs = train(table, "theta2", cfg)
    cf = posterior.fit_covariance(table, "theta1", "theta2", cfg, tau_forest=ft, sigma_forest=fs)
    assert cf.tau is ft and cf.sigma is fs
    q = table.stats[:1]
    assert posterior.covariance(table, q, "theta1", "theta2", cfg) == pytest.approx(cf.predict(q)[0])


def test_importance_matches_manual_rss_decrease(data):
    X, y, f = data
    imp = posterior.variable_importance(f)
    manual = np.zeros(X.shape[1])
    for b in range(f.tree_count):
        tree = f.tree(b)
        for node in range(tree.n_nodes):
            if not tree.is_leaf(node):
                dec = tree.rss[node] - tree.rss[tree.left[node]] - tree.rss[tree.right[node]]
                manual[tree.feature[node]] += dec
    manual /= f.tree_count
    got = dict(imp.as_pairs())
    for j in range(X.shape[1]):
        assert got[f.stat_names[j]] == pytest.approx(manual[j], rel=1e-10)
    assert imp.names[0] == "x0"
    assert list(imp.values) == sorted(imp.values, reverse=True)


def test_importance_csv(tmp_path, data):
    imp = posterior.variable_importance(data[2])
    imp.write_csv(tmp_path / "imp.csv")
    with open(tmp_path / "imp.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["statistic", "importance"]
    assert [r[0] for r in rows[1:]] == list(imp.names)
