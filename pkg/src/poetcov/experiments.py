"""Monte Carlo replication harness for the simulation designs."""
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import evaluate_against_truth
from .errors import PoetError
from .estimators import EstimatorConfig, fit
from .panel import (CalibrationParams, _draw_sigma_u, simulate_calibrated, simulate_design2,
                    simulate_model)

DESIGNS = ("calibrated", "design2", "model1", "model2", "model3")
METRICS = ("sigma_weighted", "sigma_max", "sigma_spectral", "sigma_relative_spectral",
           "precision_spectral", "sigma_u_spectral", "sigma_u_precision_spectral", "subspace_sin")


def make_generator(design, p, T, seed, params=None, K=3):
    """Return ``draw(r) -> (panel, truth)`` for replication ``r``.

    For the calibrated design the idiosyncratic covariance is drawn once
    from ``seed`` and shared by all replications.
    """
    if design == "calibrated":
        params = CalibrationParams() if params is None else params
        sigma_u = _draw_sigma_u(params, p, seed)
        return lambda r: simulate_calibrated(params, p, T, (seed, r), sigma_u=sigma_u)
    if design == "design2":
        return lambda r: simulate_design2(p, T, K, (seed, r))
    if design in ("model1", "model2", "model3"):
        m = int(design[-1])
        return lambda r: simulate_model(m, p, T, (seed, r))
    raise ValueError(f"unknown design {design!r}; choose from {DESIGNS}")


@dataclass
class SimulationResult:
    rows: list = field(default_factory=list)

    def values(self, estimator, metric):
        v = [r[metric] for r in self.rows if r["estimator"] == estimator and r.get(metric) is not None]
        return np.array(v, dtype=np.float64)

    def estimators(self):
        seen = []
        for r in self.rows:
            if r["estimator"] not in seen:
                seen.append(r["estimator"])
        return seen

    def aggregate(self):
        """Mean, standard deviation and count per estimator and metric."""
        out = []
        for name in self.estimators():
            row = {"estimator": name}
            for m in METRICS + ("K",):
                v = self.values(name, m)
                row[f"{m}_mean"] = float(v.mean()) if v.size else None
                row[f"{m}_sd"] = float(v.std(ddof=1)) if v.size > 1 else None
                row[f"{m}_n"] = int(v.size)
            row["failures"] = sum(1 for r in self.rows if r["estimator"] == name and r["failed"])
            out.append(row)
        return out

    @staticmethod
    def _write(path, rows):
        if not rows:
            open(path, "w").close()
            return
        cols = list(rows[0].keys())
        for r in rows[1:]:
            cols += [c for c in r if c not in cols]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                cells = []
                for c in cols:
                    v = r.get(c)
                    cells.append("" if v is None else format(v, ".17g") if isinstance(v, float) else v)
                w.writerow(cells)

    def to_csv(self, per_rep_path, aggregate_path=None):
        self._write(per_rep_path, self.rows)
        if aggregate_path:
            self._write(aggregate_path, self.aggregate())


def _one_rep(r, draw, estimators, seed):
    panel, truth = draw(r)
    rows = []
    for cfg in estimators:
        row = {"rep": r, "estimator": cfg.name, "failed": False}
        try:
            est = fit(cfg, panel, truth.factors, seed=(seed + r) % (2 ** 32))
            rep = evaluate_against_truth(est, truth)
            row.update(K=est.K_used, C=float(est.C_used), **rep.as_dict())
        except (PoetError, ValueError, np.linalg.LinAlgError) as exc:
            row.update(failed=True, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def run_simulation(design, p, T, reps, seed, estimators, params=None, K=3, threads=1):
    """Replicate ``design`` ``reps`` times and evaluate every estimator.

    Replication ``r`` draws from the seed pair ``(seed, r)``; with
    ``threads > 1`` replications run concurrently and are collected in
    replication order, so results do not depend on the thread count.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    estimators = [e if isinstance(e, EstimatorConfig) else EstimatorConfig(**e) for e in estimators]
    draw = make_generator(design, p, T, seed, params, K)
    work = lambda r: _one_rep(r, draw, estimators, seed)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(work, range(reps)))
    else:
        chunks = [work(r) for r in range(reps)]
    res = SimulationResult()
    for c in chunks:
        for row in c:
            row.update(design=design, p=p, T=T)
            res.rows.append(row)
    return res


def fit_calibration(panel, K=3, corr_cap=0.95):
    """Estimate :class:`CalibrationParams` from an observed panel.

    Loadings and factors come from principal components; the factor VAR(1)
    is fitted by least squares with an intercept; residual standard
    deviations give the gamma moments and the off-diagonal residual
    correlations give the correlation mean and spread.

    Raises
    ------
    NonStationaryError
        If the fitted VAR(1) is not stationary.
    """
    from .factors import estimate_factors
    from .panel import as_matrix, demean, gamma_from_moments

    Y = demean(as_matrix(panel))
    p, T = Y.shape
    if K < 1:
        raise ValueError("calibration needs K >= 1")
    if p < 2 or T < K + 3:
        raise ValueError("panel too small to calibrate")
    fit = estimate_factors(Y, K)
    L, F, U = fit.Lambda_hat, fit.F_hat, fit.U_hat
    mu_B = L.mean(axis=0)
    Sigma_B = np.atleast_2d(np.cov(L, rowvar=False))
    X = np.hstack([np.ones((T - 1, 1)), F[:-1]])
    coef, *_ = np.linalg.lstsq(X, F[1:], rcond=None)
    mu_f, Phi = coef[0], coef[1:].T
    E = F[1:] - X @ coef
    Sigma_eps = E.T @ E / E.shape[0]
    sd = np.sqrt(np.mean(U * U, axis=1))
    shape, scale = gamma_from_moments(float(sd.mean()), float(max(sd.std(ddof=1), 1e-12 * sd.mean())))
    R = np.corrcoef(U)
    off = R[np.triu_indices(p, 1)]
    return CalibrationParams(mu_B=mu_B, Sigma_B=Sigma_B, mu_f=mu_f, Phi=Phi, Sigma_eps=Sigma_eps,
                             gamma_shape=shape, gamma_scale=scale,
                             corr_mean=float(off.mean()), corr_sd=float(off.std(ddof=1)),
                             corr_cap=corr_cap)
