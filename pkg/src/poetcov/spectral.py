"""Symmetric eigendecomposition, matrix norms and the weighted quadratic norm."""
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, SingularMatrixError

# lambda_min > PD_RTOL * lambda_max counts as positive definite
PD_RTOL = 1e-10


@dataclass(frozen=True)
class SymmetricSpectrum:
    """Eigenvalues in descending order with matching orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self, k=None):
        """Sum of ``lambda_i v_i v_i'`` over the leading ``k`` terms (all if None)."""
        k = len(self.eigenvalues) if k is None else k
        V = self.eigenvectors[:, :k]
        out = (V * self.eigenvalues[:k]) @ V.T
        return symmetrize(out)


def _check_finite(A, what="matrix"):
    A = np.asarray(A, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        bad = np.argwhere(~np.isfinite(A))[0]
        raise NonFiniteError(f"{what} has a non-finite entry at index {tuple(int(i) for i in bad)}")
    return A


def symmetrize(A):
    """Return ``(A + A')/2`` so the result is exactly symmetric."""
    A = np.asarray(A, dtype=np.float64)
    return 0.5 * (A + A.T)


def fix_signs(V):
    """Flip columns so the largest-magnitude component of each is positive.

    Ties in magnitude go to the lowest row index.
    """
    V = np.array(V, dtype=np.float64, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def eigh(S):
    """Full symmetric eigendecomposition, eigenvalues descending.

    Eigenvector signs are fixed so the output is deterministic; see
    :func:`fix_signs`.
    """
    S = _check_finite(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    w, V = np.linalg.eigh(S)
    order = np.argsort(-w, kind="stable")
    return SymmetricSpectrum(w[order], fix_signs(V[:, order]))


def eigvalsh_min(S):
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(S)[0])


def is_positive_definite(S, rtol=PD_RTOL):
    w = np.linalg.eigvalsh(S)
    return bool(w[0] > rtol * max(w[-1], 0.0) and w[0] > 0)


def norm_spectral(A):
    A = _check_finite(A)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def norm_frobenius(A):
    A = _check_finite(A)
    return float(np.sqrt(np.sum(A * A)))


def norm_l1(A):
    """Maximum absolute column sum."""
    A = _check_finite(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(A), axis=0)))


def norm_max(A):
    A = _check_finite(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(A)))


def inv_sqrt(S, rtol=PD_RTOL):
    """``V diag(lambda^-1/2) V'`` for a positive definite ``S``.

    Raises
    ------
    SingularMatrixError
        If ``lambda_min <= rtol * lambda_max``.
    """
    S = _check_finite(S)
    w, V = np.linalg.eigh(S)
    if not (w[0] > rtol * max(w[-1], 0.0) and w[0] > 0):
        raise SingularMatrixError("matrix is not positive definite", w[0])
    return symmetrize((V / np.sqrt(w)) @ V.T)


def relative_error_matrix(Sigma_hat, Sigma_true, root=None):
    """``Sigma^-1/2 Sigma_hat Sigma^-1/2 - I``; pass ``root`` to reuse ``inv_sqrt(Sigma_true)``."""
    R = inv_sqrt(Sigma_true) if root is None else root
    E = R @ np.asarray(Sigma_hat, dtype=np.float64) @ R
    return symmetrize(E) - np.eye(E.shape[0])


def weighted_quadratic_norm(A_hat, Sigma_true, root=None):
    """``p^-1/2 || Sigma^-1/2 (A_hat - Sigma) Sigma^-1/2 ||_F``."""
    Sigma_true = np.asarray(Sigma_true, dtype=np.float64)
    R = inv_sqrt(Sigma_true) if root is None else root
    E = R @ (np.asarray(A_hat, dtype=np.float64) - Sigma_true) @ R
    return norm_frobenius(E) / np.sqrt(E.shape[0])
