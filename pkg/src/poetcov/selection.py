"""Choosing the threshold constant: positive-definiteness bound and cross-validation."""
import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .panel import make_rng
from .thresholding import (ResidualMoments, ThresholdSpec, as_rule, build_tau,
                           residual_moments, threshold_covariance)


def _moments(U_hat=None, moments=None):
    if moments is not None:
        return moments
    if U_hat is None:
        raise ValueError("pass residuals U_hat or precomputed moments")
    return residual_moments(U_hat)


def _spec(style, omega_value, C=0.0):
    return ThresholdSpec(C, style, omega_value)


def _threshold(mom, C, rule, style, omega_value):
    tau = build_tau(_spec(style, omega_value, C), mom.sigma, mom.theta, mom.T)
    return threshold_covariance(mom.sigma, tau, rule)


def _is_pd(S):
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return False
    return True


def _unit_tau(mom, style, omega_value):
    """Thresholds at ``C = 1``; thresholds scale linearly in C."""
    return build_tau(_spec(style, omega_value, 1.0), mom.sigma, mom.theta, mom.T)


def diagonalizing_c(mom, style="adaptive_theta", omega_value=None):
    """Smallest C at which every off-diagonal entry is thresholded to zero.

    An entry survives only if ``|sigma_ij| > tau_ij``, so this is the largest
    ratio ``|sigma_ij| / tau_ij(C=1)``. Entries whose threshold is zero for
    every C are skipped.
    """
    t1 = _unit_tau(mom, style, omega_value)
    iu = np.triu_indices(mom.p, 1)
    z, t = np.abs(mom.sigma[iu]), t1[iu]
    ok = (t > 0) & (z > 0)
    if not ok.any():
        return 0.0
    return float(np.max(z[ok] / t[ok]))


def min_eigenvalue_curve(U_hat=None, rule="hard", C_grid=(), style="adaptive_theta",
                         omega_value=None, moments=None):
    """Smallest eigenvalue of the thresholded residual covariance at each C.

    Returns a list of ``(C, lambda_min)`` pairs.
    """
    mom = _moments(U_hat, moments)
    rule = as_rule(rule)
    out = []
    for C in C_grid:
        S = _threshold(mom, float(C), rule, style, omega_value)
        out.append((float(C), float(np.linalg.eigvalsh(S)[0])))
    return out


def write_curve_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format(float(v), ".17g") for v in r])


def c_min(U_hat=None, rule="hard", resolution=1e-3, style="adaptive_theta", omega_value=None,
          moments=None):
    """Smallest C above which the thresholded residual covariance stays positive definite.

    A grid on ``[0, C_diag]`` (``C_diag`` diagonalizes the matrix) is scanned
    for the last non-PD point; the bracket it forms with the next grid point
    is then bisected to ``resolution``. The returned value is the PD end of
    the final bracket, or 0 if the matrix is PD at ``C = 0``.
    """
    mom = _moments(U_hat, moments)
    rule = as_rule(rule)
    d = np.diag(mom.sigma)
    if np.any(d <= 0):
        raise ValueError("residual variances must be positive")

    def pd(C):
        return _is_pd(_threshold(mom, C, rule, style, omega_value))

    if pd(0.0):
        return 0.0
    c_diag = diagonalizing_c(mom, style, omega_value)
    if c_diag <= 0 or not pd(c_diag * (1 + 1e-12)):
        raise ValueError("thresholded covariance is not PD even when diagonal")
    n = int(np.clip(math.ceil(c_diag / 0.02), 100, 1000))
    grid = np.linspace(0.0, c_diag * (1 + 1e-12), n + 1)
    ok = np.array([pd(C) for C in grid])
    bad = np.nonzero(~ok)[0]
    k = int(bad[-1])
    lo, hi = grid[k], grid[k + 1]
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if pd(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


def m_cap_scan(mom, rule="hard", style="adaptive_theta", omega_value=None, start=1.0, max_doublings=60):
    """Double C from ``start`` until the thresholded matrix is diagonal."""
    rule = as_rule(rule)
    C = float(start)
    p = mom.p
    off = ~np.eye(p, dtype=bool)
    for _ in range(max_doublings):
        S = _threshold(mom, C, rule, style, omega_value)
        if not np.any(S[off]):
            return C
        C *= 2.0
    raise ValueError("no diagonalizing C found by doubling")


@dataclass
class CvConfig:
    """Cross-validation settings.

    ``split`` is ``"block"`` (a random contiguous validation block) or
    ``"iid"`` (uniformly drawn validation periods). ``grid`` and ``splits``
    override the defaults; ``splits`` is a list of validation index arrays.
    """

    H: int = 10
    n_grid: int = 50
    epsilon: float = 0.05
    grid: Optional[Sequence[float]] = None
    M_cap: Optional[float] = None
    split: str = "block"
    splits: Optional[Sequence[Sequence[int]]] = None
    style: str = "adaptive_theta"
    omega: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.n_grid < 1:
            raise ValueError("n_grid must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.split not in ("block", "iid"):
            raise ValueError("split must be 'block' or 'iid'")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=np.float64)
            if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0) or np.any(g < 0):
                raise ValueError("grid must be a non-empty, strictly increasing list of C >= 0")

    def to_dict(self):
        d = dict(self.__dict__)
        if d["grid"] is not None:
            d["grid"] = [float(c) for c in d["grid"]]
        if d["splits"] is not None:
            d["splits"] = [[int(i) for i in s] for s in d["splits"]]
        return d


def train_size(T):
    """``round(T (1 - 1/log T))``."""
    return int(round(T * (1.0 - 1.0 / math.log(T))))


def make_splits(T, cfg):
    """Validation index sets, one per repeat."""
    if cfg.splits is not None:
        return [np.asarray(s, dtype=np.int64) for s in cfg.splits]
    T1 = train_size(T)
    if not 1 <= T1 < T:
        raise ValueError(f"training size {T1} must lie in [1, T) for T={T}")
    T2 = T - T1
    rng = make_rng(cfg.seed)
    out = []
    for _ in range(cfg.H):
        if cfg.split == "block":
            s = int(rng.integers(0, T - T2 + 1))
            out.append(np.arange(s, s + T2))
        else:
            out.append(np.sort(rng.choice(T, size=T2, replace=False)))
    return out


@dataclass(frozen=True)
class CvCurve:
    grid: np.ndarray
    scores: np.ndarray      # H x len(grid)
    C_min: float
    M_cap: float

    @property
    def mean(self):
        return self.scores.mean(axis=0)

    def to_csv(self, path):
        rows = [(c, m, *s) for c, m, s in zip(self.grid, self.mean, self.scores.T)]
        header = ["C", "mean_score"] + [f"split_{j}" for j in range(self.scores.shape[0])]
        write_curve_csv(path, header, rows)


def cross_validate_c(U_hat, rule="hard", cfg=None):
    """Pick C by repeated train/validation splits of the residuals.

    For each split the training residual covariance is thresholded at every
    grid C and scored by its squared Frobenius distance to the validation
    sample covariance. Scores are averaged over splits; the smallest
    minimizing C wins. The threshold rate ``omega`` uses the full sample
    size so that C is on the scale of the full-sample estimate.

    Returns
    -------
    C_star : float
    curve : CvCurve
    """
    cfg = CvConfig() if cfg is None else cfg
    rule = as_rule(rule)
    U = np.asarray(U_hat, dtype=np.float64)
    p, T = U.shape
    if T < 4:
        raise ValueError("cross-validation needs T >= 4")
    w = cfg.omega
    if w is None:
        from .thresholding import omega
        w = omega(p, T)
    full = residual_moments(U)
    cm = c_min(rule=rule, style=cfg.style, omega_value=w, moments=full)
    if cfg.grid is not None:
        grid = np.asarray(cfg.grid, dtype=np.float64)
        cap = float(grid[-1])
    else:
        cap = cfg.M_cap if cfg.M_cap is not None else m_cap_scan(full, rule, cfg.style, w)
        lo = cm + cfg.epsilon
        if lo >= cap:
            raise ValueError(f"empty C grid: C_min + epsilon = {lo:.4g} >= M = {cap:.4g}; use a larger M")
        grid = np.linspace(lo, cap, cfg.n_grid)
    splits = make_splits(T, cfg)
    scores = np.empty((len(splits), grid.size))
    for j, val in enumerate(splits):
        mask = np.ones(T, dtype=bool)
        mask[val] = False
        train = residual_moments(U[:, mask])
        Uv = U[:, val]
        S_val = Uv @ Uv.T / Uv.shape[1]
        unit = build_tau(_spec(cfg.style, w, 1.0), train.sigma, train.theta, train.T)
        for g, C in enumerate(grid):
            S = threshold_covariance(train.sigma, C * unit, rule)
            D = S - S_val
            scores[j, g] = float(np.sum(D * D))
    mean = scores.mean(axis=0)
    k = int(np.argmin(mean))
    return float(grid[k]), CvCurve(grid, scores, cm, cap)


def poet_cv(panel, K="auto", rule="hard", cfg=None, M=8, variant="IC1"):
    """POET with C chosen by :func:`cross_validate_c` on the factor residuals."""
    from .core import poet
    from .factors import estimate_factors, select_num_factors
    from .panel import as_matrix, demean

    cfg = CvConfig() if cfg is None else cfg
    Y = demean(as_matrix(panel))
    if K == "auto":
        K, _ = select_num_factors(Y, min(M, min(Y.shape) - 1), variant)
    fit = estimate_factors(Y, K)
    C_star, curve = cross_validate_c(fit.U_hat, rule, cfg)
    est = poet(Y, K, ThresholdSpec(C_star, cfg.style, cfg.omega), rule, demean=False)
    return est, curve
