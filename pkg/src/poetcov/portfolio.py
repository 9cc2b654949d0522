"""Minimum-variance portfolios, risk diagnostics and a rolling backtest."""
import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BoundViolation, DegenerateObjectiveError, PoetError
from .io import to_jsonable
from .panel import as_matrix
from .spectral import inv_sqrt, norm_max, norm_spectral, symmetrize

# slack for rounding in the bound checks, relative to the right-hand side
BOUND_RTOL = 1e-10


@dataclass(frozen=True)
class PortfolioWeights:
    w: np.ndarray

    @property
    def gross_exposure(self):
        return float(np.sum(np.abs(self.w)))

    def summary(self):
        return {"gross_exposure": self.gross_exposure,
                "max_abs_weight": float(np.max(np.abs(self.w))),
                "n_short": int(np.sum(self.w < 0))}


def min_variance_weights(Sigma_hat=None, precision=None):
    """``w = S^-1 1 / (1' S^-1 1)``, from a covariance or directly from its inverse.

    Raises
    ------
    DegenerateObjectiveError
        If ``1' S^-1 1 <= 1e-12``.
    """
    if precision is not None:
        P = np.asarray(precision, dtype=np.float64)
        x = P @ np.ones(P.shape[0])
    elif Sigma_hat is not None:
        S = np.asarray(Sigma_hat, dtype=np.float64)
        try:
            x = np.linalg.solve(S, np.ones(S.shape[0]))
        except np.linalg.LinAlgError:
            raise DegenerateObjectiveError("covariance matrix is singular") from None
    else:
        raise ValueError("pass Sigma_hat or precision")
    denom = float(np.sum(x))
    if not denom > 1e-12:
        raise DegenerateObjectiveError(f"1' S^-1 1 = {denom:.3g} is not positive")
    w = x / denom
    return PortfolioWeights(w / np.sum(w))


@dataclass(frozen=True)
class RiskMetrics:
    actual: float       # w' Sigma w
    empirical: float    # w' Sigma_hat w
    oracle: float       # min over w'1 = 1 of w' Sigma w
    regret: float       # actual - oracle


def risk_metrics(w, Sigma_true, Sigma_hat):
    w = np.asarray(getattr(w, "w", w), dtype=np.float64)
    Sigma_true = np.asarray(Sigma_true, dtype=np.float64)
    w_star = min_variance_weights(Sigma_true).w
    actual = float(w @ Sigma_true @ w)
    oracle = float(w_star @ Sigma_true @ w_star)
    return RiskMetrics(actual, float(w @ np.asarray(Sigma_hat) @ w), oracle, actual - oracle)


@dataclass(frozen=True)
class RiskBounds:
    """Absolute and relative risk-error bounds, each as (lhs, rhs)."""

    abs_lhs: float
    abs_rhs: float
    rel_lhs: float
    rel_rhs: float
    gross_exposure: float

    @property
    def holds(self):
        return (self.abs_lhs <= self.abs_rhs * (1 + BOUND_RTOL) + 1e-300
                and self.rel_lhs <= self.rel_rhs * (1 + BOUND_RTOL) + 1e-300)


def risk_error_bounds(w, Sigma_hat, Sigma_true, root=None, check=True):
    """Compare the risk error of ``w`` with its two deterministic bounds.

    ``|w'(S_hat - S)w| <= ||S_hat - S||_max ||w||_1^2`` and
    ``|w'S_hat w / w'S w - 1| <= ||S^-1/2 S_hat S^-1/2 - I||``.
    ``root`` may carry a precomputed ``inv_sqrt(Sigma_true)``.

    Raises
    ------
    BoundViolation
        When ``check`` is set and either inequality fails beyond rounding.
    """
    w = np.asarray(getattr(w, "w", w), dtype=np.float64)
    Sh = np.asarray(Sigma_hat, dtype=np.float64)
    S = np.asarray(Sigma_true, dtype=np.float64)
    D = Sh - S
    gross = float(np.sum(np.abs(w)))
    risk = float(w @ S @ w)
    abs_lhs = abs(float(w @ D @ w))
    R = inv_sqrt(S) if root is None else root
    E = symmetrize(R @ D @ R)
    out = RiskBounds(abs_lhs, norm_max(D) * gross ** 2, abs_lhs / risk, norm_spectral(E), gross)
    if check and not out.holds:
        raise BoundViolation(f"risk error bound violated: {out}")
    return out


def realized_risk(w, Y_future):
    """``w' (h^-1 sum_t y_t y_t') w`` over the raw (not demeaned) evaluation returns."""
    Yf = as_matrix(Y_future)
    r = np.asarray(w) @ Yf
    return float(r @ r / Yf.shape[1])


@dataclass
class BacktestReport:
    """Per-period records and pairwise comparisons against the first estimator."""

    names: list
    records: list = field(default_factory=list)
    comparisons: dict = field(default_factory=dict)
    window: int = 252
    rebalance_every: int = 21

    @property
    def n_periods(self):
        return len({r["period"] for r in self.records})

    def failures(self):
        return [r for r in self.records if r["failed"]]

    def risks(self, name):
        return {r["period"]: r["realized_risk"] for r in self.records
                if r["estimator"] == name and not r["failed"]}

    def to_csv(self, path):
        cols = ["period", "start", "estimator", "failed", "realized_risk", "empirical_risk",
                "actual_risk", "gross_exposure", "max_abs_weight", "n_short", "K", "C", "error"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.records:
                row = []
                for c in cols:
                    v = r.get(c)
                    if isinstance(v, float):
                        v = format(v, ".17g")
                    row.append("" if v is None else v)
                w.writerow(row)

    def summary(self):
        return {"estimators": self.names, "window": self.window,
                "rebalance_every": self.rebalance_every, "n_periods": self.n_periods,
                "n_failed": len(self.failures()), "comparisons": self.comparisons}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(to_jsonable(self.summary()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def compare(base, other):
    """Win statistics of ``base`` against ``other`` over periods where both succeeded.

    A win means strictly lower realized risk; ties count one half.
    """
    common = sorted(set(base) & set(other))
    if not common:
        return {"n": 0, "win_fraction": None, "mean_reduction_on_wins": None,
                "mean_increase_on_losses": None}
    a = np.array([base[k] for k in common])
    b = np.array([other[k] for k in common])
    win, tie, loss = a < b, a == b, a > b
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = (b - a) / b
    return {
        "n": len(common),
        "win_fraction": float((win.sum() + 0.5 * tie.sum()) / len(common)),
        "wins": int(win.sum()), "ties": int(tie.sum()), "losses": int(loss.sum()),
        "mean_reduction_on_wins": float(rel[win].mean()) if win.any() else None,
        "mean_increase_on_losses": float(-rel[loss].mean()) if loss.any() else None,
    }


def _weights_for(cfg, Y_train, factors, seed):
    from .core import precision_woodbury
    from .estimators import fit

    est = fit(cfg, Y_train, factors, seed)
    try:
        est = precision_woodbury(est)
        pw = min_variance_weights(precision=est.precision_sigma)
    except PoetError:
        pw = min_variance_weights(est.Sigma_hat)
    return est, pw


def backtest(panel, estimators, window=252, rebalance_every=21, truth=None, factors=None,
             seed=0):
    """Rolling minimum-variance backtest.

    At every rebalance date each estimator is fit on the trailing ``window``
    observations (demeaned inside the window), and the resulting weights
    are held over the next ``rebalance_every`` observations, whose raw
    second moment gives the realized risk. A period in which an estimator
    fails is recorded with ``failed=True`` and left out of the comparisons.

    Parameters
    ----------
    estimators : list of EstimatorConfig
        The first one is compared against each of the others.
    truth : TrueModel, optional
        Adds the actual risk ``w' Sigma w`` and checks the bound diagnostics.
    factors : ndarray (T x K), optional
        Needed by ``known_factor`` estimators.
    """
    Y = as_matrix(panel)
    p, T = Y.shape
    if window < 2 or rebalance_every < 1:
        raise ValueError("window must be >= 2 and rebalance_every >= 1")
    if T < window + rebalance_every:
        raise ValueError(f"panel has T={T} < window + rebalance_every = {window + rebalance_every}")
    names = [c.name for c in estimators]
    if len(set(names)) != len(names):
        names = [f"{n}#{i}" for i, n in enumerate(names)]
    report = BacktestReport(names, window=window, rebalance_every=rebalance_every)
    root = truth.Sigma_inv_sqrt if truth is not None else None
    period = 0
    for s in range(window, T - rebalance_every + 1, rebalance_every):
        Ytr = Y[:, s - window:s]
        Yte = Y[:, s:s + rebalance_every]
        Ftr = None if factors is None else factors[s - window:s]
        for name, cfg in zip(names, estimators):
            rec = {"period": period, "start": s, "estimator": name, "failed": False}
            try:
                est, pw = _weights_for(cfg, Ytr, Ftr, seed + period)
            except (PoetError, ValueError, np.linalg.LinAlgError) as exc:
                rec.update(failed=True, error=f"{type(exc).__name__}: {exc}")
                report.records.append(rec)
                continue
            rec.update(pw.summary())
            rec.update(realized_risk=realized_risk(pw.w, Yte),
                       empirical_risk=float(pw.w @ est.Sigma_hat @ pw.w),
                       K=est.K_used, C=float(est.C_used))
            if truth is not None:
                rec["actual_risk"] = float(pw.w @ truth.Sigma @ pw.w)
                risk_error_bounds(pw.w, est.Sigma_hat, truth.Sigma, root)
            report.records.append(rec)
        period += 1
    base = report.risks(names[0])
    for other in names[1:]:
        report.comparisons[other] = compare(base, report.risks(other))
    return report
