"""Named estimator configurations used by the backtest, experiments and CLI."""
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .core import (PoetEstimate, direct_threshold, known_factor, poet, precision_woodbury,
                   strict_factor)
from .panel import as_matrix, demean, sample_covariance
from .selection import CvConfig, poet_cv
from .thresholding import ShrinkageRule, ThresholdSpec

KINDS = ("poet", "poet_cv", "sfm", "threshold", "threshold_cv", "sample", "known_factor")


@dataclass
class EstimatorConfig:
    """One estimator in a comparison.

    kind
        ``poet`` (fixed C), ``poet_cv`` (cross-validated C), ``sfm``
        (strict factor model), ``threshold`` / ``threshold_cv`` (no
        factors), ``sample`` or ``known_factor`` (needs observed factors).
    K
        Integer or ``"auto"``.
    """

    name: str = "poet"
    kind: str = "poet"
    K: Union[int, str] = "auto"
    C: float = 0.5
    rule: str = "hard"
    style: str = "adaptive_theta"
    M: int = 8
    variant: str = "IC1"
    cv: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; choose from {KINDS}")
        if not (self.K == "auto" or (isinstance(self.K, (int, np.integer)) and self.K >= 0)):
            raise ValueError("K must be a non-negative integer or 'auto'")
        ShrinkageRule(self.rule)
        ThresholdSpec(self.C, self.style)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def cv_config(self, seed=0):
        kw = {"style": self.style, "seed": seed}
        kw.update(self.cv)
        return CvConfig(**kw)


def fit(cfg, panel, factors=None, seed=0):
    """Fit the configured estimator on a panel (demeaned inside)."""
    Y = demean(as_matrix(panel))
    spec = ThresholdSpec(cfg.C, cfg.style)
    k = cfg.kind
    if k == "poet":
        return poet(Y, cfg.K, spec, cfg.rule, cfg.M, cfg.variant, demean=False)
    if k == "poet_cv":
        est, _ = poet_cv(Y, cfg.K, cfg.rule, cfg.cv_config(seed), cfg.M, cfg.variant)
        return est
    if k == "sfm":
        return strict_factor(Y, cfg.K, cfg.M, cfg.variant, demean=False)
    if k == "threshold":
        return direct_threshold(Y, spec, cfg.rule, demean=False)
    if k == "threshold_cv":
        est, _ = poet_cv(Y, 0, cfg.rule, cfg.cv_config(seed))
        return est
    if k == "sample":
        return poet(Y, 0, ThresholdSpec(0.0), "hard", demean=False)
    if factors is None:
        raise ValueError("known_factor estimator needs the factor realisations")
    return known_factor(Y, factors, spec, cfg.rule, demean=True)


def fit_with_precision(cfg, panel, factors=None, seed=0):
    """Fit and add Woodbury precisions; precision errors propagate."""
    return precision_woodbury(fit(cfg, panel, factors, seed))
