"""Return panels, sample covariance and the synthetic data generators."""
import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import NonFiniteError, NonStationaryError, PanelParseError, PoetError
from .spectral import is_positive_definite, symmetrize

# A first header cell with one of these names marks a label column.
_LABEL_HEADERS = {"", "timestamp", "date", "time", "datetime", "t", "asset", "asset_id", "id"}


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def _entropy(seed):
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def make_rng(seed, *keys):
    """Counter-based (Philox) generator keyed on ``(seed, *keys)``.

    Replication ``r`` of a run with seed ``s`` uses ``make_rng(s, r)``, so
    replications can run in any order or in parallel and still agree.
    """
    ss = np.random.SeedSequence(_entropy(seed) + [int(k) for k in keys])
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# panel container and CSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReturnPanel:
    """p x T matrix of observations, one row per asset."""

    Y: np.ndarray
    asset_ids: tuple = ()
    timestamps: tuple = ()

    def __post_init__(self):
        Y = np.array(self.Y, dtype=np.float64)
        if Y.ndim != 2:
            raise ValueError(f"panel must be 2-D, got shape {Y.shape}")
        p, T = Y.shape
        if p < 1 or T < 2:
            raise ValueError(f"panel needs p >= 1 and T >= 2, got p={p}, T={T}")
        if not np.all(np.isfinite(Y)):
            i, t = np.argwhere(~np.isfinite(Y))[0]
            raise NonFiniteError(f"panel has a non-finite value for asset {i}, time {t}")
        Y.setflags(write=False)
        ids = tuple(str(a) for a in self.asset_ids) or tuple(f"a{i:04d}" for i in range(p))
        ts = tuple(str(t) for t in self.timestamps) or tuple(str(t) for t in range(T))
        if len(ids) != p:
            raise ValueError(f"{len(ids)} asset ids for {p} assets")
        if len(ts) != T:
            raise ValueError(f"{len(ts)} timestamps for {T} periods")
        if len(set(ids)) != p:
            raise ValueError("duplicate asset ids")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "asset_ids", ids)
        object.__setattr__(self, "timestamps", ts)

    @property
    def p(self):
        return self.Y.shape[0]

    @property
    def T(self):
        return self.Y.shape[1]

    def demean(self):
        return demean(self)

    def window(self, start, stop):
        """Sub-panel over time columns ``start:stop``."""
        return ReturnPanel(self.Y[:, start:stop], self.asset_ids, self.timestamps[start:stop])


def as_matrix(panel):
    """Accept a ReturnPanel or an array and return the p x T float array."""
    if isinstance(panel, ReturnPanel):
        return panel.Y
    return np.asarray(panel, dtype=np.float64)


def _parse_float(cell, row, col):
    try:
        v = float(cell)
    except ValueError:
        raise PanelParseError(f"non-numeric cell {cell!r}", row, col) from None
    if not math.isfinite(v):
        raise PanelParseError(f"non-finite cell {cell!r}", row, col)
    return v


def load_csv(path, orientation="columns"):
    """Read a panel CSV.

    ``orientation="columns"``: header row holds asset ids, each later row is
    one time period. ``orientation="rows"``: header row holds timestamps and
    each later row is one asset. In either case an optional leading label
    column (timestamps or asset ids) is detected from an empty or
    conventional first header cell (``timestamp``, ``date``, ``asset`` ...)
    or a non-numeric first data cell.
    """
    if orientation not in ("columns", "rows"):
        raise ValueError("orientation must be 'columns' or 'rows'")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    numbered = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if len(numbered) < 2:
        raise PanelParseError("file needs a header row and at least one data row")
    _, header = numbered[0]
    header = [h.strip() for h in header]
    width = len(header)
    data = numbered[1:]
    for lineno, r in data:
        if len(r) != width:
            raise PanelParseError(f"ragged row: expected {width} cells, found {len(r)}", lineno)

    first = data[0][1][0].strip()
    try:
        float(first)
        first_numeric = True
    except ValueError:
        first_numeric = False
    has_labels = header[0].lower() in _LABEL_HEADERS or not first_numeric
    start = 1 if has_labels else 0

    col_names = header[start:]
    row_labels = [r[0].strip() for _, r in data] if has_labels else []
    values = np.empty((len(data), width - start))
    for k, (lineno, r) in enumerate(data):
        for j in range(start, width):
            values[k, j - start] = _parse_float(r[j].strip(), lineno, j + 1)

    if orientation == "columns":
        ids, ts, Y = col_names, row_labels, values.T
        id_cols = [(j + start + 1) for j in range(len(ids))]
        seen = {}
        for a, c in zip(ids, id_cols):
            if a in seen:
                raise PanelParseError(f"duplicate asset id {a!r}", 1, c)
            seen[a] = c
    else:
        ids, ts, Y = row_labels, col_names, values
        seen = {}
        for a, (lineno, _) in zip(ids, data):
            if a in seen:
                raise PanelParseError(f"duplicate asset id {a!r}", lineno, 1)
            seen[a] = lineno
    if len(set(ts)) != len(ts):
        raise PanelParseError("duplicate timestamps")
    return ReturnPanel(Y, tuple(ids), tuple(ts))


def fmt(x):
    """17 significant digits: lossless for IEEE doubles."""
    return format(float(x), ".17g")


def save_csv(panel, path, orientation="columns"):
    """Write a panel in the format :func:`load_csv` reads, with a label column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if orientation == "columns":
            w.writerow(["timestamp", *panel.asset_ids])
            for t, ts in enumerate(panel.timestamps):
                w.writerow([ts, *(fmt(v) for v in panel.Y[:, t])])
        elif orientation == "rows":
            w.writerow(["asset", *panel.timestamps])
            for i, a in enumerate(panel.asset_ids):
                w.writerow([a, *(fmt(v) for v in panel.Y[i])])
        else:
            raise ValueError("orientation must be 'columns' or 'rows'")


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

def _demean_rows(Y):
    # Rows whose mean is already at rounding level are left alone, and a
    # second pass cleans up cancellation error, so demean is idempotent.
    for _ in range(3):
        m = Y.mean(axis=1, keepdims=True)
        rms = np.sqrt((Y * Y).mean(axis=1, keepdims=True))
        m = np.where(np.abs(m) <= 1e-14 * rms, 0.0, m)
        if not m.any():
            break
        Y = Y - m
    return Y


def demean(panel):
    """Subtract each asset's time mean. Returns the same type it was given."""
    if isinstance(panel, ReturnPanel):
        return ReturnPanel(_demean_rows(panel.Y), panel.asset_ids, panel.timestamps)
    return _demean_rows(np.asarray(panel, dtype=np.float64))


def sample_covariance(panel):
    """``T^-1 Y Y'`` of a demeaned panel (divisor T, not T - 1).

    Warns, without failing, when the rows do not look demeaned.
    """
    Y = as_matrix(panel)
    T = Y.shape[1]
    means = np.abs(Y.mean(axis=1))
    scale = np.sqrt((Y * Y).mean(axis=1)) + 1e-300
    if np.any(means > 1e-8 * scale):
        warnings.warn("sample_covariance: panel rows are not demeaned", RuntimeWarning, stacklevel=2)
    return symmetrize(Y @ Y.T / T)


# ---------------------------------------------------------------------------
# calibrated Fama-French style model
# ---------------------------------------------------------------------------

_DEFAULT_MU_B = (0.0047, 0.0007, -1.8078)
_DEFAULT_SIGMA_B = ((0.0767, -0.00004, 0.0087),
                   (-0.00004, 0.0841, 0.0013),
                   (0.0087, 0.0013, 0.1649))
_DEFAULT_MU_F = (-0.0050, 0.0335, -0.0756)
_DEFAULT_COV_F = ((1.0037, 0.0011, -0.0009),
                 (0.0011, 0.9999, 0.0042),
                 (-0.0009, 0.0042, 0.9973))
_DEFAULT_PHI = ((-0.0712, 0.0468, 0.1413),
               (-0.0764, -0.0008, 0.0646),
               (0.0195, -0.0071, -0.0544))


def default_sigma_eps():
    """Innovation covariance implied by the published stationary cov(f) and Phi."""
    C = np.array(_DEFAULT_COV_F)
    Phi = np.array(_DEFAULT_PHI)
    return symmetrize(C - Phi @ C @ Phi.T)


def gamma_from_moments(mean, sd):
    """Method-of-moments (shape, scale) of a Gamma with the given mean and sd."""
    if mean <= 0 or sd <= 0:
        raise ValueError("gamma mean and sd must be positive")
    return (mean / sd) ** 2, sd * sd / mean


@dataclass
class CalibrationParams:
    """Inputs of the calibrated three-factor simulation.

    Loadings and the factor VAR(1) default to the published calibration.
    The gamma law for idiosyncratic standard deviations and the correlation
    generator defaults are synthetic (the source residual statistics are not
    published) and can be overridden.
    """

    mu_B: np.ndarray = field(default_factory=lambda: np.array(_DEFAULT_MU_B))
    Sigma_B: np.ndarray = field(default_factory=lambda: np.array(_DEFAULT_SIGMA_B))
    mu_f: np.ndarray = field(default_factory=lambda: np.array(_DEFAULT_MU_F))
    Phi: np.ndarray = field(default_factory=lambda: np.array(_DEFAULT_PHI))
    Sigma_eps: np.ndarray = field(default_factory=default_sigma_eps)
    gamma_shape: float = 16.0   # mean 0.4, sd 0.1
    gamma_scale: float = 0.025
    corr_mean: float = 0.0
    corr_sd: float = 0.2
    corr_cap: float = 0.95

    def __post_init__(self):
        self.mu_B = np.asarray(self.mu_B, dtype=np.float64).reshape(-1)
        K = self.mu_B.shape[0]
        self.Sigma_B = np.asarray(self.Sigma_B, dtype=np.float64).reshape(K, K)
        self.mu_f = np.asarray(self.mu_f, dtype=np.float64).reshape(K)
        self.Phi = np.asarray(self.Phi, dtype=np.float64).reshape(K, K)
        self.Sigma_eps = np.asarray(self.Sigma_eps, dtype=np.float64).reshape(K, K)
        if self.gamma_shape <= 0 or self.gamma_scale <= 0:
            raise ValueError("gamma_shape and gamma_scale must be positive")
        if not 0 < self.corr_cap < 1:
            raise ValueError("corr_cap must lie in (0, 1)")
        if self.corr_sd < 0:
            raise ValueError("corr_sd must be non-negative")
        radius = max(abs(np.linalg.eigvals(self.Phi))) if K else 0.0
        if radius >= 1:
            raise NonStationaryError(radius)
        if np.linalg.eigvalsh(symmetrize(self.Sigma_B))[0] < 0:
            raise ValueError("Sigma_B must be positive semidefinite")
        if K and not is_positive_definite(symmetrize(self.Sigma_eps)):
            raise ValueError("Sigma_eps must be positive definite")

    @property
    def K(self):
        return self.mu_B.shape[0]

    @classmethod
    def with_gamma_moments(cls, mean, sd, **kw):
        shape, scale = gamma_from_moments(mean, sd)
        return cls(gamma_shape=shape, gamma_scale=scale, **kw)

    def to_dict(self):
        d = asdict(self)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known - {"gamma_mean", "gamma_sd"}
        if extra:
            raise ValueError(f"unknown calibration keys: {sorted(extra)}")
        d = dict(d)
        if "gamma_mean" in d or "gamma_sd" in d:
            shape, scale = gamma_from_moments(d.pop("gamma_mean"), d.pop("gamma_sd"))
            d.setdefault("gamma_shape", shape)
            d.setdefault("gamma_scale", scale)
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def var1_stationary_covariance(Phi, Sigma_eps):
    """Solve ``C = Phi C Phi' + Sigma_eps`` through ``vec(C) = (I - Phi kron Phi)^-1 vec(Sigma_eps)``."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=np.float64))
    Sigma_eps = np.atleast_2d(np.asarray(Sigma_eps, dtype=np.float64))
    K = Phi.shape[0]
    radius = max(abs(np.linalg.eigvals(Phi))) if K else 0.0
    if radius >= 1:
        raise NonStationaryError(radius)
    A = np.eye(K * K) - np.kron(Phi, Phi)
    C = np.linalg.solve(A, Sigma_eps.reshape(-1)).reshape(K, K)
    C = symmetrize(C)
    resid = np.max(np.abs(C - Phi @ C @ Phi.T - Sigma_eps)) if K else 0.0
    if resid > 1e-10 * max(1.0, np.max(np.abs(Sigma_eps))):
        raise PoetError(f"Lyapunov residual too large: {resid:.3g}")
    return C


@dataclass
class TrueModel:
    """Ground truth behind a simulated panel."""

    B: np.ndarray          # p x K loadings
    Sigma_u: np.ndarray    # p x p
    cov_f: np.ndarray      # K x K
    factors: np.ndarray    # T x K realised factors
    Sigma: np.ndarray = None

    def __post_init__(self):
        if self.Sigma is None:
            self.Sigma = symmetrize(self.B @ self.cov_f @ self.B.T + self.Sigma_u)

    @property
    def K(self):
        return self.B.shape[1]

    @cached_property
    def Sigma_inv(self):
        return symmetrize(np.linalg.inv(self.Sigma))

    @cached_property
    def Sigma_u_inv(self):
        return symmetrize(np.linalg.inv(self.Sigma_u))

    @cached_property
    def Sigma_inv_sqrt(self):
        from .spectral import inv_sqrt
        return inv_sqrt(self.Sigma)


def _truncated_normal(rng, mean, sd, cap, n):
    x = rng.normal(mean, sd, n) if sd > 0 else np.full(n, float(mean))
    if sd == 0:
        if abs(mean) > cap:
            raise ValueError("corr_mean lies outside [-corr_cap, corr_cap] with corr_sd = 0")
        return x
    bad = np.abs(x) > cap
    while bad.any():
        x[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = np.abs(x) > cap
    return x


def sparse_correlation(off_diag, p, step=0.01):
    """Hard-threshold a unit-diagonal matrix at the last PD value of a descending grid.

    The grid runs 1, 1 - step, ... down to 0; the scan stops at the first
    value that breaks positive definiteness and the previous value is used.
    Returns ``(Sigma_0, threshold)``.
    """
    iu = np.triu_indices(p, 1)
    n_steps = int(round(1.0 / step))
    best = np.eye(p)
    best_t = 1.0
    last_count = 0
    absval = np.abs(off_diag)
    for k in range(n_steps + 1):
        t = round(1.0 - k * step, 10)
        keep = absval > t
        count = int(keep.sum())
        if count == last_count:
            best_t = t
            continue
        S0 = np.eye(p)
        S0[iu] = np.where(keep, off_diag, 0.0)
        S0.T[iu] = S0[iu]
        try:
            np.linalg.cholesky(S0)
        except np.linalg.LinAlgError:
            break
        if not is_positive_definite(S0):
            break
        best, best_t, last_count = S0, t, count
    return best, best_t


def calibrate_error_covariance(params, p, seed):
    """``Sigma_u = D Sigma_0 D`` with gamma-distributed standard deviations.

    Off-diagonals of Sigma_0 are truncated normal; Sigma_0 is then
    sparsified by :func:`sparse_correlation`.
    """
    rng = make_rng(seed)
    sd = rng.gamma(params.gamma_shape, params.gamma_scale, p)
    off = _truncated_normal(rng, params.corr_mean, params.corr_sd, params.corr_cap, p * (p - 1) // 2)
    S0, _ = sparse_correlation(off, p)
    return symmetrize(sd[:, None] * S0 * sd[None, :])


def _draw_sigma_u(params, p, seed, max_attempts=100):
    for attempt in range(max_attempts):
        S = calibrate_error_covariance(params, p, _entropy(seed) + [0xE0, attempt])
        if is_positive_definite(S):
            return S
    raise PoetError(f"no positive definite Sigma_u after {max_attempts} attempts")


def _ids(p, T):
    return tuple(f"a{i:04d}" for i in range(p)), tuple(str(t) for t in range(T))


def simulate_var1(mu, Phi, Sigma_eps, T, rng, burn_in=500):
    """T x K path of ``f_t = mu + Phi f_{t-1} + eps_t`` started at the stationary mean."""
    K = len(mu)
    f = np.linalg.solve(np.eye(K) - Phi, mu)
    L = np.linalg.cholesky(Sigma_eps)
    eps = rng.standard_normal((burn_in + T, K)) @ L.T
    out = np.empty((T, K))
    for t in range(burn_in + T):
        f = mu + Phi @ f + eps[t]
        if t >= burn_in:
            out[t - burn_in] = f
    return out


def simulate_calibrated(params, p, T, seed, sigma_u=None, burn_in=500):
    """Draw a panel from the calibrated three-factor model.

    ``sigma_u`` can be passed to hold the idiosyncratic covariance fixed
    across replications (it is drawn once per dimension in the reference
    experiments); otherwise it is drawn from ``seed``.

    Returns ``(ReturnPanel, TrueModel)``.
    """
    if p < 1 or T < 2:
        raise ValueError("need p >= 1 and T >= 2")
    if sigma_u is None:
        sigma_u = _draw_sigma_u(params, p, seed)
    rng_b, rng_f, rng_u = (make_rng(seed, k) for k in (1, 2, 3))
    B = rng_b.multivariate_normal(params.mu_B, params.Sigma_B, size=p, method="eigh")
    F = simulate_var1(params.mu_f, params.Phi, params.Sigma_eps, T, rng_f, burn_in)
    U = np.linalg.cholesky(sigma_u) @ rng_u.standard_normal((p, T))
    Y = B @ F.T + U
    cov_f = var1_stationary_covariance(params.Phi, params.Sigma_eps)
    ids, ts = _ids(p, T)
    return ReturnPanel(Y, ids, ts), TrueModel(B, sigma_u, cov_f, F)


# ---------------------------------------------------------------------------
# Gaussian designs
# ---------------------------------------------------------------------------

def generate_banded_sigma_u(p, decay=0.5, bandwidth=9):
    """``decay^|i-j|`` inside the band ``|i-j| <= bandwidth``, zero outside."""
    d = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return np.where(d <= bandwidth, decay ** d, 0.0)


def generate_ar1_sigma(p, rho=0.85):
    """Dense Toeplitz ``rho^|i-j|``."""
    d = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return np.power(float(rho), d)


def simulate_gaussian_factor(p, T, K, sigma_u, seed):
    """Standard normal factors and loadings plus N(0, sigma_u) errors."""
    rng_b, rng_f, rng_u = (make_rng(seed, k) for k in (1, 2, 3))
    B = rng_b.standard_normal((p, K))
    F = rng_f.standard_normal((T, K))
    U = np.linalg.cholesky(sigma_u) @ rng_u.standard_normal((p, T))
    Y = B @ F.T + U
    ids, ts = _ids(p, T)
    return ReturnPanel(Y, ids, ts), TrueModel(B, np.asarray(sigma_u, dtype=np.float64), np.eye(K), F)


def simulate_design2(p, T, K=3, seed=0):
    """Banded idiosyncratic covariance with ``K`` standard normal factors."""
    return simulate_gaussian_factor(p, T, K, generate_banded_sigma_u(p), seed)


def simulate_model(model, p, T, seed):
    """Comparison models: 1 one-factor + banded, 2 banded only, 3 cross-sectional AR(1)."""
    if model == 1:
        return simulate_gaussian_factor(p, T, 1, generate_banded_sigma_u(p), seed)
    if model == 2:
        return simulate_gaussian_factor(p, T, 0, generate_banded_sigma_u(p), seed)
    if model == 3:
        return simulate_gaussian_factor(p, T, 0, generate_ar1_sigma(p, 0.85), seed)
    raise ValueError(f"unknown model {model!r}; expected 1, 2 or 3")
