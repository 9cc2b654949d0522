"""Principal-component factor estimates and the information-criterion choice of K."""
import csv
import math
from dataclasses import dataclass

import numpy as np

from .panel import as_matrix
from .spectral import fix_signs

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class FactorFit:
    """Least-squares factors and loadings with ``T^-1 F'F = I``.

    Attributes
    ----------
    K : int
    F_hat : ndarray, T x K
    Lambda_hat : ndarray, p x K
    U_hat : ndarray, p x T
        ``Y - Lambda_hat F_hat'``.
    top_eigenvalues : ndarray, length K
        Leading eigenvalues of the sample covariance ``T^-1 Y Y'``.
    """

    K: int
    F_hat: np.ndarray
    Lambda_hat: np.ndarray
    U_hat: np.ndarray
    top_eigenvalues: np.ndarray

    @property
    def V(self):
        """Leading eigenvalues of ``T^-1 Y'Y`` as a K x K diagonal."""
        return np.diag(self.top_eigenvalues)

    @property
    def common(self):
        return self.Lambda_hat @ self.F_hat.T


def _sorted_eigh(G):
    w, V = np.linalg.eigh(G)
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def estimate_factors(panel, K):
    """Fit ``K`` factors by principal components.

    ``F_hat`` is ``sqrt(T)`` times the leading eigenvectors of ``Y'Y``;
    ``Lambda_hat = Y F_hat / T``. The eigenproblem is solved on the smaller
    of ``Y'Y`` and ``YY'``; both give the same fit. Each factor column is
    signed so that its largest-magnitude entry is positive.
    """
    Y = as_matrix(panel)
    p, T = Y.shape
    K = int(K)
    if K < 0 or K > min(p, T):
        raise ValueError(f"K must lie in [0, min(p, T)] = [0, {min(p, T)}], got {K}")
    if K == 0:
        return FactorFit(0, np.zeros((T, 0)), np.zeros((p, 0)), Y.copy(), np.zeros(0))

    F = None
    if p < T:
        w, Xi = _sorted_eigh(Y @ Y.T)
        lam = w[:K]
        if lam[-1] > 1e-12 * max(lam[0], 0.0) and lam[-1] > 0:
            # right singular vectors from the left ones
            F = (Y.T @ Xi[:, :K]) / np.sqrt(lam) * math.sqrt(T)
    if F is None:
        w, Vt = _sorted_eigh(Y.T @ Y)
        lam = np.maximum(w[:K], 0.0)
        F = Vt[:, :K] * math.sqrt(T)
    F = fix_signs(F)
    Lam = Y @ F / T
    U = Y - Lam @ F.T
    return FactorFit(K, F, Lam, U, lam / T)


def ic_penalty(T, p, variant="IC1"):
    """Per-factor penalty ``g(T, p)`` of the IC1 or IC2 criterion."""
    a = (p + T) / (p * T)
    v = variant.upper()
    if v == "IC1":
        return a * math.log(p * T / (p + T))
    if v == "IC2":
        return a * math.log(min(p, T))
    raise ValueError(f"unknown criterion {variant!r}; use 'IC1' or 'IC2'")


@dataclass(frozen=True)
class ObjectiveCurve:
    """IC objective for ``K1 = 0..M``."""

    K: np.ndarray
    log_residual: np.ndarray
    penalty: np.ndarray
    total: np.ndarray
    variant: str
    exact_low_rank: bool = False

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K1", "log_residual", "penalty", "total"])
            for row in zip(self.K, self.log_residual, self.penalty, self.total):
                w.writerow([int(row[0])] + [format(float(v), ".17g") for v in row[1:]])


def select_num_factors(panel, M=8, variant="IC1"):
    """Choose K by minimizing ``log(V(K1)) + K1 g(T, p)`` over ``0 <= K1 <= M``.

    ``V(K1) = (pT)^-1 ||Y - T^-1 Y F F'||_F^2`` is computed from the
    eigenvalues of the smaller Gram matrix. Ties go to the smallest K1. If
    the residual vanishes at some ``K1 <= M`` the panel is exactly low rank:
    that rank is returned and ``curve.exact_low_rank`` is set.

    Returns
    -------
    K_hat : int
    curve : ObjectiveCurve
    """
    Y = as_matrix(panel)
    p, T = Y.shape
    M = int(M)
    if M < 0 or M > min(p, T) - 1:
        raise ValueError(f"M must lie in [0, min(p, T) - 1] = [0, {min(p, T) - 1}], got {M}")
    g = ic_penalty(T, p, variant)
    G = Y @ Y.T if p <= T else Y.T @ Y
    eig = np.sort(np.linalg.eigvalsh(G))[::-1][:M]
    total_ss = float(np.sum(Y * Y))
    resid = np.empty(M + 1)
    resid[0] = total_ss
    resid[1:] = total_ss - np.cumsum(eig)
    resid = np.maximum(resid, 0.0)
    Ks = np.arange(M + 1)
    log_res = np.log(np.maximum(resid / (p * T), LOG_FLOOR))
    pen = Ks * g
    total = log_res + pen
    zero = np.nonzero(resid <= 1e-12 * max(total_ss, LOG_FLOOR))[0]
    if zero.size:
        k = int(zero[0])
        return k, ObjectiveCurve(Ks, log_res, pen, total, variant.upper(), True)
    k = int(np.argmin(total))  # first minimum, so ties go to the smallest K1
    return k, ObjectiveCurve(Ks, log_res, pen, total, variant.upper(), False)
