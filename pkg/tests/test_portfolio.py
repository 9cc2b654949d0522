import csv
import json

import numpy as np
import pytest

from poetcov.errors import BoundViolation, DegenerateObjectiveError
from poetcov.estimators import EstimatorConfig
from poetcov.panel import simulate_design2
from poetcov.portfolio import (backtest, compare, min_variance_weights, realized_risk,
                               risk_error_bounds, risk_metrics)

from conftest import random_spd


def test_weight_examples():
    np.testing.assert_allclose(min_variance_weights(np.eye(4)).w, np.full(4, 0.25), atol=1e-15)
    np.testing.assert_allclose(min_variance_weights(np.diag([1.0, 2.0])).w, [2 / 3, 1 / 3], atol=1e-15)
    np.testing.assert_allclose(min_variance_weights(precision=np.diag([1.0, 0.5])).w, [2 / 3, 1 / 3],
                               atol=1e-15)
    with pytest.raises(DegenerateObjectiveError):
        min_variance_weights(precision=np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        min_variance_weights()


def test_weights_sum_to_one(rng):
    for _ in range(50):
        w = min_variance_weights(random_spd(rng, 15)).w
        assert abs(w.sum() - 1.0) <= 1e-10


def test_random_search_oracle(rng):
    S = random_spd(rng, 20)
    w = min_variance_weights(S).w
    best = w @ S @ w
    for _ in range(200):
        v = rng.uniform(0, 1, 20)
        v /= v.sum()
        assert best <= v @ S @ v
    # also against random affine (shorting) points
    for _ in range(200):
        v = rng.standard_normal(20)
        v = v / v.sum() if abs(v.sum()) > 0.1 else np.full(20, 0.05)
        assert best <= v @ S @ v * (1 + 1e-12)


def test_risk_metrics_examples(rng):
    S = random_spd(rng, 8)
    w_star = min_variance_weights(S).w
    m = risk_metrics(w_star, S, S)
    assert m.regret == pytest.approx(0.0, abs=1e-14)
    assert m.empirical == m.actual
    for _ in range(100):
        Sh = random_spd(rng, 8)
        w = min_variance_weights(Sh)
        m = risk_metrics(w, S, Sh)
        assert m.regret >= -1e-14 * m.oracle


def test_risk_bounds(rng):
    S = random_spd(rng, 6)
    b = risk_error_bounds(min_variance_weights(S).w, S, S)
    assert b.abs_lhs == b.abs_rhs == 0.0 and b.rel_lhs == 0.0 and b.rel_rhs <= 1e-12
    Sh = S + 0.1 * np.eye(6)
    e1 = np.eye(6)[0]
    b = risk_error_bounds(e1, Sh, S)
    assert b.abs_lhs == pytest.approx(0.1) and b.abs_rhs == pytest.approx(0.1)
    for _ in range(200):
        S, Sh = random_spd(rng, 10), random_spd(rng, 10)
        w = rng.standard_normal(10)
        w /= w.sum()
        assert risk_error_bounds(w, Sh, S).holds


def test_bound_violation_is_raised():
    from poetcov import portfolio

    # a fake truth whose inverse square root is wrong makes the relative bound fail
    S = np.eye(2)
    with pytest.raises(BoundViolation):
        portfolio.risk_error_bounds([0.5, 0.5], 3.0 * np.eye(2), S, root=np.zeros((2, 2)))


def test_compare_ties_and_wins():
    a = {0: 1.0, 1: 2.0, 2: 3.0, 3: 1.0}
    assert compare(a, dict(a))["win_fraction"] == 0.5
    b = {0: 2.0, 1: 1.0, 2: 3.0}
    c = compare(a, b)
    assert c["n"] == 3 and c["win_fraction"] == pytest.approx(0.5)
    assert c["mean_reduction_on_wins"] == pytest.approx(0.5)
    assert c["mean_increase_on_losses"] == pytest.approx(1.0)
    assert compare({}, b)["win_fraction"] is None


def _hand_backtest(Y, window):
    p = Y.shape[0]
    X = Y[:, :window]
    X = X - X.mean(axis=1, keepdims=True)
    S = [[sum(X[i, t] * X[j, t] for t in range(window)) / window for j in range(p)] for i in range(p)]
    # 3 x 3 inverse by cofactors
    a, b, c = S[0]
    d, e, f = S[1]
    g, h, k = S[2]
    cof = np.array([[e * k - f * h, -(d * k - f * g), d * h - e * g],
                    [-(b * k - c * h), a * k - c * g, -(a * h - b * g)],
                    [b * f - c * e, -(a * f - c * d), a * e - b * d]])
    det = a * cof[0, 0] + b * cof[0, 1] + c * cof[0, 2]
    inv = cof.T / det
    x = inv.sum(axis=1)
    w = x / x.sum()
    r = [sum(w[i] * Y[i, t] for i in range(p)) for t in range(window, window + 21)]
    return w, sum(v * v for v in r) / 21


def test_single_period_hand_check(rng):
    Y = rng.standard_normal((3, 51)) * [[1.0], [2.0], [0.5]] + 0.1
    rep = backtest(Y, [EstimatorConfig("s", "sample")], window=30)
    assert rep.n_periods == 1
    w, risk = _hand_backtest(Y, 30)
    assert rep.records[0]["realized_risk"] == pytest.approx(risk, rel=1e-10)
    assert realized_risk(w, Y[:, 30:51]) == pytest.approx(risk, rel=1e-12)


def test_identical_estimators_split_evenly(tmp_path):
    panel, truth = simulate_design2(20, 200, 3, 1)
    cfg = EstimatorConfig("a", "poet", K=3, rule="soft")
    rep = backtest(panel, [cfg, cfg], window=100, rebalance_every=20, truth=truth)
    assert rep.n_periods == 5
    (name,) = rep.comparisons
    assert rep.comparisons[name]["win_fraction"] == 0.5
    rep.to_csv(tmp_path / "r.csv")
    rep.to_json(tmp_path / "r.json")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 10 and all(r["failed"] == "False" for r in rows)
    assert json.loads((tmp_path / "r.json").read_text())["n_periods"] == 5


def test_backtest_oracle_optimality_and_failures():
    panel, truth = simulate_design2(20, 160, 3, 2)
    cfgs = [EstimatorConfig("poet", "poet", K=3, rule="soft"),
            EstimatorConfig("known", "known_factor", K=3, rule="soft")]
    # no factors supplied: the known-factor estimator fails every period
    rep = backtest(panel, cfgs, window=100, rebalance_every=20, truth=truth)
    assert len(rep.failures()) == rep.n_periods == 3
    assert rep.comparisons["known"]["n"] == 0
    oracle = risk_metrics(np.full(20, 0.05), truth.Sigma, truth.Sigma).oracle
    for r in rep.records:
        if not r["failed"]:
            assert r["actual_risk"] >= oracle * (1 - 1e-12)


def test_backtest_input_checks():
    with pytest.raises(ValueError):
        backtest(np.zeros((3, 40)), [EstimatorConfig()], window=30)
