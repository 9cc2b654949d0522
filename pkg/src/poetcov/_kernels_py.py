"""Pure-numpy versions of the compiled kernels, same signatures and semantics."""
import numpy as np

HARD, SOFT, SCAD, ADAPTIVE_LASSO = 0, 1, 2, 3


def shrink_array(z, tau, rule, a=3.7, eta=1.0):
    z, tau = np.broadcast_arrays(np.asarray(z, dtype=np.float64),
                                 np.asarray(tau, dtype=np.float64))
    az = np.abs(z)
    if rule == HARD:
        return np.where(az > tau, z, 0.0)
    alive = az > tau
    soft = np.copysign(np.where(alive, az - tau, 0.0), z)
    if rule == SOFT:
        return np.where(alive, soft, 0.0)
    if rule == SCAD:
        # clamp: rounding can push the middle piece past |z| at az == a*tau
        mid = np.copysign(np.minimum(((a - 1.0) * az - a * tau) / (a - 2.0), az), z)
        out = np.where(az <= 2.0 * tau, soft, np.where(az <= a * tau, mid, z))
        return np.where(alive, out, 0.0)
    ratio = np.divide(tau, az, out=np.zeros_like(az), where=alive)
    return np.where(alive, z * (1.0 - ratio ** eta), 0.0)


def threshold_matrix(raw, tau, rule, a=3.7, eta=1.0):
    raw = np.asarray(raw, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    iu = np.triu_indices(raw.shape[0], 1)
    z, t = raw[iu], tau[iu]
    v = np.where(np.abs(z) >= t, shrink_array(z, t, rule, a, eta), 0.0)
    out = np.diag(np.diag(raw)).astype(np.float64)
    out[iu] = v
    out.T[iu] = v
    return out


def residual_moments(U):
    U = np.ascontiguousarray(U, dtype=np.float64)
    p, T = U.shape
    sigma = np.empty((p, p))
    theta = np.empty((p, p))
    # one row block at a time keeps memory at O(pT)
    for i in range(p):
        prod = U[i] * U[i:]
        m = prod.sum(axis=1) / T
        d = prod - m[:, None]
        th = (d * d).sum(axis=1) / T
        sigma[i, i:] = m
        sigma[i:, i] = m
        theta[i, i:] = th
        theta[i:, i] = th
    return sigma, theta
