"""The POET covariance estimator, its least-squares twin and Woodbury precision."""
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .errors import SingularIdiosyncraticError, SingularMatrixError
from .factors import FactorFit, ObjectiveCurve, estimate_factors, select_num_factors
from .panel import ReturnPanel, as_matrix, demean as _demean, sample_covariance
from .spectral import (PD_RTOL, eigh, inv_sqrt, norm_frobenius, norm_max,
                       norm_spectral, symmetrize, weighted_quadratic_norm)
from .thresholding import (ShrinkageRule, ThresholdSpec, as_rule, build_tau,
                           residual_moments, threshold_covariance)


@dataclass(frozen=True)
class PoetEstimate:
    """Covariance estimate ``low_rank + Sigma_u_hat`` with optional precisions.

    ``loadings`` and ``factor_cov`` describe the low-rank part as
    ``L G L'`` for the Woodbury step (``G = I`` for principal components).
    """

    Sigma_hat: np.ndarray
    Sigma_u_hat: np.ndarray
    low_rank: np.ndarray
    K_used: int
    C_used: float
    rule: ShrinkageRule
    spec: ThresholdSpec
    factor_fit: Optional[FactorFit]
    loadings: np.ndarray
    factor_cov: np.ndarray
    omega: float
    method: str = "poet"
    k_curve: Optional[ObjectiveCurve] = None
    precision_sigma_u: Optional[np.ndarray] = None
    precision_sigma: Optional[np.ndarray] = None
    woodbury_residual: Optional[float] = None

    @property
    def p(self):
        return self.Sigma_hat.shape[0]

    def metadata(self):
        return {
            "method": self.method,
            "p": self.p,
            "K": self.K_used,
            "C": self.C_used,
            "omega": self.omega,
            "rule": self.rule.to_dict(),
            "threshold": self.spec.to_dict(),
            "woodbury_residual": self.woodbury_residual,
            "sigma_u_offdiag_nonzero": int(np.count_nonzero(self.Sigma_u_hat) - self.p),
            "norms": {
                "Sigma_hat_spectral": norm_spectral(self.Sigma_hat),
                "Sigma_u_hat_spectral": norm_spectral(self.Sigma_u_hat),
                "Sigma_u_hat_lambda_min": float(np.linalg.eigvalsh(self.Sigma_u_hat)[0]),
            },
        }


def principal_complement(Sigma_sam, K):
    """Split a symmetric matrix into its leading rank-K spectral part and the rest."""
    S = np.asarray(Sigma_sam, dtype=np.float64)
    p = S.shape[0]
    K = int(K)
    if K < 0 or K > p:
        raise ValueError(f"K must lie in [0, p] = [0, {p}], got {K}")
    if K == 0:
        return np.zeros_like(S), S.copy()
    if K == p:
        return S.copy(), np.zeros_like(S)
    low = eigh(S).reconstruct(K)
    return low, S - low


def _resolve_K(Y, K, M, variant):
    if isinstance(K, str):
        if K != "auto":
            raise ValueError("K must be an integer or 'auto'")
        M = min(M, min(Y.shape) - 1)
        return select_num_factors(Y, M, variant)
    return int(K), None


def _prepare(panel, demean):
    Y = as_matrix(panel)
    return _demean(Y) if demean else Y


def _tau(spec, raw, fit, T):
    if spec.style == "adaptive_theta":
        th = residual_moments(fit.U_hat).theta if spec.C > 0 else None
        if spec.C == 0:
            return np.zeros_like(raw)
        return build_tau(spec, raw, th, T)
    return build_tau(spec, raw, None, T)


def poet(panel, K="auto", spec=None, rule="hard", M=8, variant="IC1", demean=True):
    """POET estimate: leading K principal components plus a thresholded complement.

    Parameters
    ----------
    panel : ReturnPanel or ndarray (p x T)
    K : int or "auto"
        "auto" picks K with :func:`select_num_factors` (``M``, ``variant``).
    spec : ThresholdSpec
        Threshold constant and style; ``adaptive_theta`` thresholds are built
        from the factor-fit residuals.
    rule : ShrinkageRule or str
    demean : bool
        Remove row means before estimation.

    Notes
    -----
    Off-diagonal entries that the threshold leaves unchanged are copied from
    the sample covariance, so ``C = 0`` reproduces it bit for bit.
    """
    spec = ThresholdSpec() if spec is None else spec
    rule = as_rule(rule)
    Y = _prepare(panel, demean)
    p, T = Y.shape
    K, curve = _resolve_K(Y, K, M, variant)
    S = sample_covariance(Y) if demean else symmetrize(Y @ Y.T / T)
    fit = estimate_factors(Y, K)
    low, R = principal_complement(S, K)
    tau = _tau(spec, R, fit, T)
    R_T = threshold_covariance(R, tau, rule)
    Sigma_hat = np.where(R_T == R, S, low + R_T)
    return PoetEstimate(
        Sigma_hat=Sigma_hat, Sigma_u_hat=R_T, low_rank=low, K_used=K, C_used=spec.C,
        rule=rule, spec=spec, factor_fit=fit, loadings=fit.Lambda_hat,
        factor_cov=np.eye(K), omega=spec.resolve_omega(p, T), method="poet", k_curve=curve)


def poet_substitution(panel, K="auto", spec=None, rule="hard", M=8, variant="IC1", demean=True):
    """Least-squares route: ``Lambda Lambda' + thresholded residual covariance``.

    With the same thresholds this equals :func:`poet` up to rounding.
    """
    spec = ThresholdSpec() if spec is None else spec
    rule = as_rule(rule)
    Y = _prepare(panel, demean)
    p, T = Y.shape
    K, curve = _resolve_K(Y, K, M, variant)
    fit = estimate_factors(Y, K)
    mom = residual_moments(fit.U_hat)
    tau = build_tau(spec, mom.sigma, mom.theta, T)
    Su = threshold_covariance(mom.sigma, tau, rule)
    low = symmetrize(fit.Lambda_hat @ fit.Lambda_hat.T)
    return PoetEstimate(
        Sigma_hat=symmetrize(low + Su), Sigma_u_hat=Su, low_rank=low, K_used=K, C_used=spec.C,
        rule=rule, spec=spec, factor_fit=fit, loadings=fit.Lambda_hat,
        factor_cov=np.eye(K), omega=spec.resolve_omega(p, T), method="poet_substitution",
        k_curve=curve)


def strict_factor(panel, K="auto", M=8, variant="IC1", demean=True):
    """Strict factor model: leading K components plus the diagonal of the complement."""
    Y = _prepare(panel, demean)
    p, T = Y.shape
    K, curve = _resolve_K(Y, K, M, variant)
    S = sample_covariance(Y) if demean else symmetrize(Y @ Y.T / T)
    fit = estimate_factors(Y, K)
    low, R = principal_complement(S, K)
    Su = np.diag(np.diag(R))
    return PoetEstimate(
        Sigma_hat=symmetrize(low + Su), Sigma_u_hat=Su, low_rank=low, K_used=K,
        C_used=float("inf"), rule=ShrinkageRule("hard"), spec=ThresholdSpec(0.0),
        factor_fit=fit, loadings=fit.Lambda_hat, factor_cov=np.eye(K),
        omega=float("nan"), method="strict_factor", k_curve=curve)


def direct_threshold(panel, spec=None, rule="hard", demean=True):
    """Threshold the sample covariance itself (no factors)."""
    est = poet(panel, 0, spec, rule, demean=demean)
    return replace(est, method="threshold")


def known_factor(panel, factors, spec=None, rule="hard", demean=True):
    """Covariance estimate when the factor realisations are observed.

    Loadings come from regressing each asset on the (demeaned) factors; the
    residual covariance is thresholded. Unless ``spec.omega`` is set, the
    threshold rate is ``sqrt(log p / T)``: with observed factors there is
    no factor-estimation term.
    """
    spec = ThresholdSpec() if spec is None else spec
    rule = as_rule(rule)
    Y = _prepare(panel, demean)
    p, T = Y.shape
    F = np.asarray(factors, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != T:
        raise ValueError(f"factors have {F.shape[0]} rows for T={T}")
    if demean:
        F = F - F.mean(axis=0)
    K = F.shape[1]
    B = np.linalg.solve(F.T @ F, F.T @ Y.T).T
    U = Y - B @ F.T
    S_f = symmetrize(F.T @ F / T)
    if spec.omega is None:
        spec = ThresholdSpec(spec.C, spec.style, float(np.sqrt(np.log(p) / T)))
    mom = residual_moments(U)
    tau = build_tau(spec, mom.sigma, mom.theta, T)
    Su = threshold_covariance(mom.sigma, tau, rule)
    low = symmetrize(B @ S_f @ B.T)
    return PoetEstimate(
        Sigma_hat=symmetrize(low + Su), Sigma_u_hat=Su, low_rank=low, K_used=K, C_used=spec.C,
        rule=rule, spec=spec, factor_fit=None, loadings=B, factor_cov=S_f,
        omega=spec.omega, method="known_factor")


def _chol_inverse(S):
    c = sla.cho_factor(S, lower=True, check_finite=False)
    return symmetrize(sla.cho_solve(c, np.eye(S.shape[0]), check_finite=False))


def precision_woodbury(estimate, tol=1e-6):
    """Fill the precision fields through the Sherman-Morrison-Woodbury identity.

    With ``A`` the inverse of ``Sigma_u_hat`` and ``Sigma_hat = L G L' + Sigma_u_hat``,
    ``Sigma_hat^-1 = A - A L (G^-1 + L'A L)^-1 L'A``.

    Raises
    ------
    SingularIdiosyncraticError
        ``Sigma_u_hat`` is not positive definite; carries ``lambda_min`` and ``C``.
    SingularMatrixError
        The identity check ``||Sigma_hat Sigma_hat^-1 - I||_max <= tol`` fails.
    """
    Su = estimate.Sigma_u_hat
    w = np.linalg.eigvalsh(Su)
    if not (w[0] > PD_RTOL * max(w[-1], 0.0) and w[0] > 0):
        raise SingularIdiosyncraticError(w[0], estimate.C_used)
    try:
        A = _chol_inverse(Su)
    except np.linalg.LinAlgError:
        raise SingularIdiosyncraticError(w[0], estimate.C_used) from None
    L = estimate.loadings
    K = L.shape[1]
    if K == 0:
        P = A
    else:
        AL = A @ L
        core = np.linalg.inv(estimate.factor_cov) + L.T @ AL
        P = symmetrize(A - AL @ np.linalg.solve(core, AL.T))
    resid = norm_max(estimate.Sigma_hat @ P - np.eye(P.shape[0]))
    if resid > tol:
        raise SingularMatrixError(
            f"Woodbury check failed: ||Sigma_hat Sigma_hat^-1 - I||_max = {resid:.3g}",
            float(np.linalg.eigvalsh(estimate.Sigma_hat)[0]))
    return replace(estimate, precision_sigma_u=A, precision_sigma=P, woodbury_residual=resid)


@dataclass(frozen=True)
class ErrorReport:
    """Distances between an estimate and the truth. Inverse-based entries are
    None when the estimate could not be inverted."""

    sigma_weighted: float
    sigma_max: float
    sigma_spectral: float
    sigma_relative_spectral: float
    precision_spectral: Optional[float]
    sigma_u_spectral: float
    sigma_u_precision_spectral: Optional[float]
    subspace_sin: Optional[float] = None

    def as_dict(self):
        return dict(self.__dict__)


def subspace_distance(A, B):
    """Sine of the largest principal angle between ``span(A)`` and ``span(B)``.

    For unequal dimensions the smaller subspace is compared against the larger.
    """
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if A.shape[1] == 0 or B.shape[1] == 0:
        return None
    return float(np.sin(np.max(sla.subspace_angles(A, B))))


def evaluate_against_truth(estimate, truth):
    """Errors of ``estimate`` against a :class:`~poetcov.panel.TrueModel`."""
    Sigma = truth.Sigma
    root = truth.Sigma_inv_sqrt  # raises SingularMatrixError for singular truth
    D = estimate.Sigma_hat - Sigma
    rel = root @ estimate.Sigma_hat @ root
    rel = symmetrize(rel) - np.eye(rel.shape[0])
    prec_err = None
    su_prec_err = None
    est = estimate
    if est.precision_sigma is None:
        try:
            est = precision_woodbury(est)
        except SingularMatrixError:
            est = estimate
    if est.precision_sigma is not None:
        prec_err = norm_spectral(est.precision_sigma - truth.Sigma_inv)
        su_prec_err = norm_spectral(est.precision_sigma_u - truth.Sigma_u_inv)
    sub = None
    if truth.K > 0 and estimate.loadings.shape[1] > 0:
        sub = subspace_distance(estimate.loadings, truth.B)
    return ErrorReport(
        sigma_weighted=weighted_quadratic_norm(estimate.Sigma_hat, Sigma, root),
        sigma_max=norm_max(D),
        sigma_spectral=norm_spectral(D),
        sigma_relative_spectral=norm_spectral(rel),
        precision_spectral=prec_err,
        sigma_u_spectral=norm_spectral(estimate.Sigma_u_hat - truth.Sigma_u),
        sigma_u_precision_spectral=su_prec_err,
        subspace_sin=sub,
    )


def save_estimate(estimate, outdir, asset_ids=None, extra_meta=None):
    """Write the estimate as CSV matrices plus ``meta.json``.

    Files: ``Sigma_hat.csv``, ``Sigma_u_hat.csv``, ``precision.csv`` (when
    available), ``loadings.csv``, ``factors.csv``, ``meta.json``.
    """
    from .io import write_json, write_matrix_csv

    os.makedirs(outdir, exist_ok=True)
    ids = list(asset_ids) if asset_ids is not None else [f"a{i:04d}" for i in range(estimate.p)]
    write_matrix_csv(os.path.join(outdir, "Sigma_hat.csv"), estimate.Sigma_hat, ids, ids)
    write_matrix_csv(os.path.join(outdir, "Sigma_u_hat.csv"), estimate.Sigma_u_hat, ids, ids)
    if estimate.precision_sigma is not None:
        write_matrix_csv(os.path.join(outdir, "precision.csv"), estimate.precision_sigma, ids, ids)
    fcols = [f"f{k + 1}" for k in range(estimate.K_used)]
    write_matrix_csv(os.path.join(outdir, "loadings.csv"),
                     estimate.loadings.reshape(estimate.p, -1), ids, fcols)
    if estimate.factor_fit is not None:
        F = estimate.factor_fit.F_hat
        write_matrix_csv(os.path.join(outdir, "factors.csv"), F.reshape(F.shape[0], -1),
                         [str(t) for t in range(F.shape[0])], fcols)
    meta = estimate.metadata()
    if extra_meta:
        meta.update(extra_meta)
    write_json(os.path.join(outdir, "meta.json"), meta)
    return outdir
