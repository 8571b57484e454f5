# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the sequential samplers.

These mirror `gcmc._kernels_py` exactly: both backends consume the same
pre-generated random numbers, so swapping backends changes runtime only.
"""

import numpy as np

from libc.math cimport sqrt, log, INFINITY


def gaussian_gibbs_chain(double mu0, double tau0,
                         double[::1] mu, double[::1] s2, double[::1] c,
                         double lam, double z0,
                         double[:, ::1] xnorm, double[::1] znorm,
                         bint keep_x):
    """Exact-conditional Gibbs sweeps for the conjugate Gaussian model.

    tau0 is the prior precision (0 for an improper uniform prior); xnorm has
    one row of standard normals per block, znorm one per sweep.
    """
    cdef Py_ssize_t b = mu.shape[0]
    cdef Py_ssize_t n = znorm.shape[0]
    cdef Py_ssize_t i, j

    a_arr = np.empty(b)
    off_arr = np.empty(b)
    sd_arr = np.empty(b)
    w_arr = np.empty(b)
    cdef double[::1] a = a_arr, off = off_arr, sd = sd_arr, w = w_arr

    cdef double clam, total_prec = tau0
    for j in range(b):
        clam = c[j] * lam
        a[j] = s2[j] / (s2[j] + clam)
        off[j] = clam * mu[j] / (s2[j] + clam)
        sd[j] = sqrt(clam * s2[j] / (s2[j] + clam))
        w[j] = 1.0 / clam
        total_prec += w[j]

    cdef double zsd = 1.0 / sqrt(total_prec)
    cdef double zbase = tau0 * mu0

    z_out_arr = np.empty(n)
    cdef double[::1] z_out = z_out_arr
    x_out_arr = np.empty((n, b)) if keep_x else None
    cdef double[:, ::1] x_out
    if keep_x:
        x_out = x_out_arr

    cdef double z = z0, acc, xji
    for i in range(n):
        acc = zbase
        for j in range(b):
            xji = a[j] * z + off[j] + sd[j] * xnorm[j, i]
            acc += w[j] * xji
            if keep_x:
                x_out[i, j] = xji
        z = acc / total_prec + zsd * znorm[i]
        z_out[i] = z
    return z_out_arr, x_out_arr


def rwm_quad_chains(bint in_log_space,
                    double[::1] q1, double[::1] q2,
                    double[::1] z0, double[::1] step,
                    double[:, ::1] norms, double[:, ::1] unifs):
    """Independent scalar RWM chains with log-density q1*t + q2*t*t.

    t is the state itself, or its logarithm when in_log_space is set (in
    which case non-positive proposals are rejected outright).  One chain per
    row of norms/unifs.
    """
    cdef Py_ssize_t b = q1.shape[0]
    cdef Py_ssize_t n = norms.shape[1]
    cdef Py_ssize_t i, j

    out_arr = np.empty((b, n))
    acc_arr = np.zeros(b, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long[::1] accepted = acc_arr

    cdef double z, t, cur, zp, tp, lp
    for j in range(b):
        z = z0[j]
        if in_log_space and z <= 0.0:
            raise ValueError("initial state must be positive for a log-space target")
        t = log(z) if in_log_space else z
        cur = q1[j] * t + q2[j] * t * t
        for i in range(n):
            zp = z + step[j] * norms[j, i]
            if in_log_space and zp <= 0.0:
                lp = -INFINITY
            else:
                tp = log(zp) if in_log_space else zp
                lp = q1[j] * tp + q2[j] * tp * tp
            if log(unifs[j, i]) < lp - cur:
                z = zp
                cur = lp
                accepted[j] += 1
            out[j, i] = z
    return out_arr, acc_arr
