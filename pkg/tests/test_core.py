import json
import os

import numpy as np
import pytest

from poetcov.core import (direct_threshold, evaluate_against_truth, known_factor, poet,
                          poet_substitution, precision_woodbury, principal_complement,
                          save_estimate, strict_factor)
from poetcov.errors import SingularIdiosyncraticError
from poetcov.panel import ReturnPanel, TrueModel, demean, sample_covariance, simulate_design2
from poetcov.selection import diagonalizing_c
from poetcov.spectral import eigh, norm_max, norm_spectral
from poetcov.thresholding import ThresholdSpec, residual_moments, threshold_covariance

from conftest import factor_panel, random_spd


def test_principal_complement_examples(rng):
    S = np.diag([5.0, 1.0, 1.0])
    low, R = principal_complement(S, 1)
    np.testing.assert_allclose(low, np.diag([5.0, 0, 0]), atol=1e-14)
    low0, R0 = principal_complement(S, 0)
    assert not low0.any() and np.array_equal(R0, S)
    lowp, Rp = principal_complement(S, 3)
    assert not Rp.any()
    with pytest.raises(ValueError):
        principal_complement(S, 4)
    A = random_spd(rng, 12)
    for K in range(13):
        low, R = principal_complement(A, K)
        assert norm_max(low + R - A) <= 1e-10
        assert np.linalg.matrix_rank(low, tol=1e-8) <= K


def test_estimate_invariants(rng):
    Y = factor_panel(rng, 40, 100, K=3)
    est = poet(Y, 3, ThresholdSpec(0.5), "soft")
    assert np.array_equal(est.Sigma_hat, est.Sigma_hat.T)
    assert norm_max(est.Sigma_hat - est.low_rank - est.Sigma_u_hat) <= 1e-10
    np.testing.assert_allclose(est.low_rank, eigh(sample_covariance(Y)).reconstruct(3), atol=1e-10)


def test_substitution_equals_spectral_route():
    for s in range(30):
        rng = np.random.default_rng([11, s])
        p = (10, 50, 100)[s % 3]
        T = (50, 200)[s % 2]
        Y = factor_panel(rng, p, T, K=3)
        for K1 in range(6):
            for rule in ("hard", "soft"):
                a = poet(Y, K1, ThresholdSpec(0.5), rule)
                b = poet_substitution(Y, K1, ThresholdSpec(0.5), rule)
                assert norm_max(a.Sigma_hat - b.Sigma_hat) <= 1e-8
                assert norm_max(a.Sigma_u_hat - b.Sigma_u_hat) <= 1e-8


def test_zero_threshold_is_sample_covariance(rng):
    Y = factor_panel(rng, 20, 15)
    S = sample_covariance(Y)
    for K in (0, 1, 3):
        np.testing.assert_array_equal(poet(Y, K, ThresholdSpec(0.0)).Sigma_hat, S)
    panel = ReturnPanel(Y + 0.3)
    np.testing.assert_array_equal(poet(panel, 2, ThresholdSpec(0.0)).Sigma_hat,
                                  sample_covariance(demean(panel)))


def test_large_threshold_is_strict_factor(rng):
    Y = factor_panel(rng, 25, 60)
    fit_U = poet(Y, 2, ThresholdSpec(0.0)).factor_fit.U_hat
    M = 1.01 * diagonalizing_c(residual_moments(fit_U)) + 1.0
    est = poet(Y, 2, ThresholdSpec(M), "hard")
    Su = est.Sigma_u_hat
    assert np.count_nonzero(Su - np.diag(np.diag(Su))) == 0
    sfm = strict_factor(Y, 2)
    np.testing.assert_allclose(est.Sigma_hat, sfm.Sigma_hat, atol=1e-12)


def test_no_factors_constant_threshold_is_direct_thresholding(rng):
    Y = factor_panel(rng, 15, 40)
    spec = ThresholdSpec(1.0, "constant", 0.2)
    est = poet(Y, 0, spec, "hard")
    S = sample_covariance(Y)
    np.testing.assert_array_equal(est.Sigma_hat, threshold_covariance(S, np.full(S.shape, 0.2), "hard"))
    np.testing.assert_array_equal(direct_threshold(Y, spec, "hard").Sigma_hat, est.Sigma_hat)
    sub = poet_substitution(Y, 0, spec, "hard")
    assert sub.loadings.shape == (15, 0)
    np.testing.assert_allclose(sub.Sigma_hat, est.Sigma_hat, atol=1e-14)


def test_noiseless_low_rank_panel(rng):
    Y = demean(rng.standard_normal((12, 2)) @ rng.standard_normal((2, 40)))
    est = poet_substitution(Y, 2, ThresholdSpec(0.5), "hard")
    assert np.max(np.abs(np.diag(est.Sigma_u_hat))) <= 1e-10
    np.testing.assert_allclose(est.Sigma_hat, sample_covariance(Y), atol=1e-10)


def test_auto_k(rng):
    Y = factor_panel(rng, 40, 100, K=3)
    est = poet(Y, "auto", ThresholdSpec(0.5))
    assert est.K_used == 3 and est.k_curve is not None
    with pytest.raises(ValueError):
        poet(Y, "three")


# -- Woodbury ------------------------------------------------------------------

def _dense_inverse(S):
    return np.linalg.inv(S)


def test_woodbury_matches_dense_inverse():
    for s in range(20):
        rng = np.random.default_rng([12, s])
        p = int(rng.integers(10, 201))
        T = int(rng.integers(p + 20, 2 * p + 60))
        Y = factor_panel(rng, p, T, K=3)
        est = precision_woodbury(poet(Y, 3, ThresholdSpec(0.5), "soft"))
        oracle = _dense_inverse(est.Sigma_hat)
        err = norm_spectral(est.precision_sigma - oracle) / norm_spectral(oracle)
        assert err <= 1e-6
        assert est.woodbury_residual <= 1e-6


def test_woodbury_no_factors(rng):
    Y = factor_panel(rng, 10, 80)
    est = precision_woodbury(poet(Y, 0, ThresholdSpec(0.5), "soft"))
    np.testing.assert_allclose(est.precision_sigma, np.linalg.inv(est.Sigma_u_hat), atol=1e-10)


def test_woodbury_closed_form(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((8, 2)))
    est = poet(factor_panel(rng, 8, 30), 0, ThresholdSpec(0.0))
    from dataclasses import replace
    est = replace(est, Sigma_u_hat=np.eye(8), loadings=Q, factor_cov=np.eye(2),
                  Sigma_hat=np.eye(8) + Q @ Q.T)
    out = precision_woodbury(est)
    np.testing.assert_allclose(out.precision_sigma, np.eye(8) - Q @ Q.T / 2, atol=1e-14)


def test_woodbury_singular_idiosyncratic(rng):
    Y = factor_panel(rng, 30, 12)
    est = poet(Y, 1, ThresholdSpec(0.0))
    with pytest.raises(SingularIdiosyncraticError) as info:
        precision_woodbury(est)
    assert info.value.C == 0.0 and info.value.lambda_min <= 1e-8


def test_known_factor_estimator(rng):
    panel, truth = simulate_design2(30, 200, 3, 5)
    est = precision_woodbury(known_factor(panel, truth.factors, ThresholdSpec(0.5), "soft"))
    assert est.K_used == 3 and est.method == "known_factor"
    assert est.omega == pytest.approx(np.sqrt(np.log(30) / 200))
    np.testing.assert_allclose(est.precision_sigma @ est.Sigma_hat, np.eye(30), atol=1e-6)
    with pytest.raises(ValueError):
        known_factor(panel, truth.factors[:10], ThresholdSpec(0.5))


# -- evaluation and output ------------------------------------------------------

def _truth(Sigma, Sigma_u=None, B=None):
    p = Sigma.shape[0]
    B = np.zeros((p, 0)) if B is None else B
    return TrueModel(B=B, Sigma_u=Sigma if Sigma_u is None else Sigma_u,
                     cov_f=np.eye(B.shape[1]), factors=None, Sigma=Sigma)


def test_evaluate_examples(rng):
    Y = factor_panel(rng, 6, 200)
    est = poet(Y, 0, ThresholdSpec(0.0))
    exact = evaluate_against_truth(est, _truth(est.Sigma_hat))
    assert exact.sigma_weighted == pytest.approx(0.0, abs=1e-12)
    assert exact.sigma_max == 0.0 and exact.sigma_spectral == 0.0
    assert exact.precision_spectral == pytest.approx(0.0, abs=1e-10)
    assert exact.sigma_relative_spectral == pytest.approx(0.0, abs=1e-12)

    from dataclasses import replace
    two = replace(est, Sigma_hat=2.0 * np.eye(6), Sigma_u_hat=2.0 * np.eye(6),
                  low_rank=np.zeros((6, 6)))
    rep = evaluate_against_truth(two, _truth(np.eye(6)))
    assert rep.sigma_relative_spectral == pytest.approx(1.0)
    assert rep.sigma_weighted == pytest.approx(1.0)
    assert rep.precision_spectral == pytest.approx(0.5)


def test_evaluate_degrades_when_not_invertible(rng):
    Y = factor_panel(rng, 20, 10)
    est = poet(Y, 1, ThresholdSpec(0.0))
    rep = evaluate_against_truth(est, _truth(np.eye(20)))
    assert rep.precision_spectral is None and rep.sigma_u_precision_spectral is None
    assert rep.sigma_spectral > 0


def test_save_estimate(tmp_path, rng):
    from poetcov.io import read_matrix_csv

    Y = factor_panel(rng, 5, 60)
    est = precision_woodbury(poet(Y, 1, ThresholdSpec(0.5), "soft"))
    save_estimate(est, tmp_path, ["a", "b", "c", "d", "e"], {"seed": 3})
    names = sorted(os.listdir(tmp_path))
    assert names == ["Sigma_hat.csv", "Sigma_u_hat.csv", "factors.csv", "loadings.csv",
                     "meta.json", "precision.csv"]
    back = read_matrix_csv(tmp_path / "Sigma_hat.csv")
    np.testing.assert_array_equal(back[0] if isinstance(back, tuple) else back, est.Sigma_hat)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["K"] == 1 and meta["seed"] == 3 and meta["woodbury_residual"] <= 1e-6
