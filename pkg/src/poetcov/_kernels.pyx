# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: elementwise thresholding and residual second/fourth moments.

Rule codes: 0 hard, 1 soft, 2 SCAD, 3 adaptive lasso.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, copysign, pow

cnp.import_array()


cdef inline double _shrink(double z, double t, int rule, double a, double eta) noexcept nogil:
    cdef double az = fabs(z), m
    if rule == 0:
        if az > t:
            return z
        return 0.0
    if az <= t:
        return 0.0
    if rule == 1:
        return copysign(az - t, z)
    if rule == 2:
        if az <= 2.0 * t:
            return copysign(az - t, z)
        if az <= a * t:
            # clamp: rounding can push the middle piece past |z| at az == a*t
            m = ((a - 1.0) * az - a * t) / (a - 2.0)
            return copysign(m if m < az else az, z)
        return z
    # adaptive lasso
    return z * (1.0 - pow(t / az, eta))


def shrink_array(z, tau, int rule, double a=3.7, double eta=1.0):
    """Apply the shrinkage rule elementwise to broadcast-compatible arrays."""
    zb, tb = np.broadcast_arrays(np.asarray(z, dtype=np.float64),
                                 np.asarray(tau, dtype=np.float64))
    cdef const double[::1] zf = np.ascontiguousarray(zb).ravel()
    cdef const double[::1] tf = np.ascontiguousarray(tb).ravel()
    out = np.empty(zf.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t k, n = zf.shape[0]
    with nogil:
        for k in range(n):
            o[k] = _shrink(zf[k], tf[k], rule, a, eta)
    return out.reshape(zb.shape)


def threshold_matrix(raw, tau, int rule, double a=3.7, double eta=1.0):
    """Keep the diagonal, shrink each off-diagonal pair with its own threshold.

    Off-diagonal entry becomes s(r) * 1{|r| >= tau}. Only the upper triangle
    of ``raw`` and ``tau`` is read; the result is mirrored so it is exactly
    symmetric.
    """
    cdef const double[:, ::1] r = np.ascontiguousarray(raw, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(tau, dtype=np.float64)
    cdef Py_ssize_t p = r.shape[0]
    out = np.empty((p, p), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double z, tij, v
    with nogil:
        for i in range(p):
            o[i, i] = r[i, i]
            for j in range(i + 1, p):
                z = r[i, j]
                tij = t[i, j]
                if fabs(z) >= tij:
                    v = _shrink(z, tij, rule, a, eta)
                else:
                    v = 0.0
                o[i, j] = v
                o[j, i] = v
    return out


def residual_moments(U):
    """Two-pass sigma_ij = mean_t u_it u_jt and theta_ij = mean_t (u_it u_jt - sigma_ij)^2."""
    cdef const double[:, ::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t p = u.shape[0], T = u.shape[1]
    sigma = np.empty((p, p), dtype=np.float64)
    theta = np.empty((p, p), dtype=np.float64)
    cdef double[:, ::1] s = sigma
    cdef double[:, ::1] th = theta
    cdef Py_ssize_t i, j, k
    cdef double acc, d, m
    cdef double invT = 1.0 / T
    with nogil:
        for i in range(p):
            for j in range(i, p):
                acc = 0.0
                for k in range(T):
                    acc = acc + u[i, k] * u[j, k]
                m = acc * invT
                acc = 0.0
                for k in range(T):
                    d = u[i, k] * u[j, k] - m
                    acc = acc + d * d
                s[i, j] = m
                s[j, i] = m
                th[i, j] = acc * invT
                th[j, i] = acc * invT
    return sigma, theta
