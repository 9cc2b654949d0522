"""Shrinkage rules and entry-dependent thresholds for covariance matrices."""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from ._kernels_py import ADAPTIVE_LASSO, HARD, SCAD, SOFT

_RULE_CODES = {"hard": HARD, "soft": SOFT, "scad": SCAD, "adaptive_lasso": ADAPTIVE_LASSO}
STYLES = ("adaptive_theta", "correlation", "constant")


@dataclass(frozen=True)
class ShrinkageRule:
    """Generalized shrinkage ``s(z, tau)``.

    Every rule returns 0 for ``|z| <= tau``, moves ``z`` by at most ``tau``
    and never flips its sign.

    Parameters
    ----------
    kind : {"hard", "soft", "scad", "adaptive_lasso"}
    scad_a : float
        SCAD knot multiplier, must exceed 2.
    al_eta : float
        Adaptive-lasso exponent, at least 1. With ``al_eta=1`` the rule
        coincides with soft thresholding.
    """

    kind: str = "hard"
    scad_a: float = 3.7
    al_eta: float = 1.0

    def __post_init__(self):
        if self.kind not in _RULE_CODES:
            raise ValueError(f"unknown shrinkage rule {self.kind!r}; choose from {sorted(_RULE_CODES)}")
        if not self.scad_a > 2:
            raise ValueError("scad_a must be > 2")
        if not self.al_eta >= 1:
            raise ValueError("al_eta must be >= 1")

    @property
    def code(self):
        return _RULE_CODES[self.kind]

    def __call__(self, z, tau):
        return shrink(z, tau, self)

    def to_dict(self):
        return {"kind": self.kind, "scad_a": self.scad_a, "al_eta": self.al_eta}


def as_rule(rule):
    if isinstance(rule, ShrinkageRule):
        return rule
    if rule is None:
        return ShrinkageRule()
    if isinstance(rule, dict):
        return ShrinkageRule(**rule)
    return ShrinkageRule(str(rule))


def shrink(z, tau, rule="hard"):
    """Apply a shrinkage rule to scalars or arrays.

    >>> shrink(0.5, 0.2, "soft")
    0.3
    """
    rule = as_rule(rule)
    t = np.asarray(tau, dtype=np.float64)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("threshold must be non-negative")
    out = _backend.shrink_array(z, t, rule.code, rule.scad_a, rule.al_eta)
    if np.ndim(out) == 0:
        return float(out)
    return out


def omega(p, T):
    """Rate ``1/sqrt(p) + sqrt(log p / T)`` (natural log)."""
    if p < 1 or T < 1:
        raise ValueError("omega needs p >= 1 and T >= 1")
    return 1.0 / math.sqrt(p) + math.sqrt(math.log(p) / T)


@dataclass(frozen=True)
class ResidualMoments:
    """``sigma_ij`` = mean of ``u_it u_jt``; ``theta_ij`` = mean squared deviation of the products."""

    sigma: np.ndarray
    theta: np.ndarray
    T: int

    @property
    def p(self):
        return self.sigma.shape[0]


def residual_moments(U_hat):
    """Second and fourth-order residual moments from a p x T residual matrix."""
    U = np.asarray(U_hat, dtype=np.float64)
    if U.ndim != 2:
        raise ValueError("residuals must be a p x T matrix")
    if U.shape[1] < 2:
        raise ValueError("residual moments need T >= 2")
    if not np.all(np.isfinite(U)):
        from .errors import NonFiniteError
        raise NonFiniteError("residual matrix has non-finite entries")
    sigma, theta = _backend.residual_moments(U)
    return ResidualMoments(sigma, theta, U.shape[1])


@dataclass(frozen=True)
class ThresholdSpec:
    """How to turn a constant ``C`` into entry-wise thresholds.

    ``adaptive_theta``: ``C * omega * sqrt(theta_ij)``;
    ``correlation``: ``C * omega * sqrt(r_ii r_jj)``;
    ``constant``: ``C * omega``.
    ``omega=None`` means ``omega(p, T)`` of the data at hand.
    """

    C: float = 0.5
    style: str = "adaptive_theta"
    omega: Optional[float] = None

    def __post_init__(self):
        if not self.C >= 0:
            raise ValueError("C must be non-negative")
        if self.style not in STYLES:
            raise ValueError(f"unknown threshold style {self.style!r}; choose from {STYLES}")
        if self.omega is not None and not self.omega >= 0:
            raise ValueError("omega must be non-negative")

    def with_C(self, C):
        return ThresholdSpec(C, self.style, self.omega)

    def resolve_omega(self, p, T):
        return omega(p, T) if self.omega is None else float(self.omega)

    def to_dict(self):
        return {"C": self.C, "style": self.style, "omega": self.omega}


def build_tau(spec, raw, theta_hat=None, T=None):
    """Matrix of thresholds ``tau_ij`` for ``raw`` under ``spec``.

    ``T`` is only needed when ``spec.omega`` is None.
    """
    raw = np.asarray(raw, dtype=np.float64)
    p = raw.shape[0]
    if spec.omega is None and T is None:
        raise ValueError("build_tau needs T when spec.omega is not set")
    w = spec.resolve_omega(p, T)
    if spec.C == 0:
        return np.zeros((p, p))
    scale = spec.C * w
    if spec.style == "adaptive_theta":
        if theta_hat is None:
            raise ValueError("adaptive_theta thresholds need theta_hat")
        return scale * np.sqrt(np.maximum(np.asarray(theta_hat, dtype=np.float64), 0.0))
    if spec.style == "correlation":
        d = np.sqrt(np.maximum(np.diag(raw), 0.0))
        return scale * np.outer(d, d)
    return np.full((p, p), scale)


def threshold_covariance(raw, tau_matrix, rule="hard"):
    """Keep the diagonal, replace each off-diagonal by ``s(r_ij) 1{|r_ij| >= tau_ij}``."""
    rule = as_rule(rule)
    raw = np.asarray(raw, dtype=np.float64)
    tau = np.broadcast_to(np.asarray(tau_matrix, dtype=np.float64), raw.shape)
    if np.any(tau < 0) or np.any(np.isnan(tau)):
        raise ValueError("thresholds must be non-negative")
    return _backend.threshold_matrix(raw, tau, rule.code, rule.scad_a, rule.al_eta)


def threshold_residuals(moments, spec, rule="hard"):
    """Thresholded idiosyncratic covariance from :class:`ResidualMoments`.

    Correlation-style thresholds use the diagonal of ``moments.sigma``.
    """
    tau = build_tau(spec, moments.sigma, moments.theta, moments.T)
    return threshold_covariance(moments.sigma, tau, rule)


def sparsity_measure(Sigma_u, q):
    """``max_i sum_j |sigma_ij|^q``; for ``q = 0`` zero entries count as 0."""
    A = np.abs(np.asarray(Sigma_u, dtype=np.float64))
    if q < 0:
        raise ValueError("q must be non-negative")
    if q == 0:
        return float(np.max(np.sum(A != 0, axis=1)))
    return float(np.max(np.sum(A ** q, axis=1)))
