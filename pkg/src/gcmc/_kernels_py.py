"""Pure-numpy fallback for the compiled kernels in `_speedups`.

Both implementations consume identical pre-generated random numbers, so they
produce the same chains (the Gibbs chain's global update sums block
contributions in a different order, which can differ in the last few ulps
when there is more than one block).
"""

from __future__ import annotations

import numpy as np


def gaussian_gibbs_chain(mu0, tau0, mu, s2, c, lam, z0, xnorm, znorm, keep_x):
    b = mu.shape[0]
    n = znorm.shape[0]
    clam = c * lam
    a = s2 / (s2 + clam)
    off = clam * mu / (s2 + clam)
    sd = np.sqrt(clam * s2 / (s2 + clam))
    w = 1.0 / clam
    total_prec = tau0 + np.sum(w)
    zsd = 1.0 / np.sqrt(total_prec)
    zbase = tau0 * mu0

    z_out = np.empty(n)
    x_out = np.empty((n, b)) if keep_x else None
    z = z0
    for i in range(n):
        x = a * z + off + sd * xnorm[:, i]
        z = (zbase + w @ x) / total_prec + zsd * znorm[i]
        z_out[i] = z
        if keep_x:
            x_out[i] = x
    return z_out, x_out


def rwm_quad_chains(in_log_space, q1, q2, z0, step, norms, unifs):
    b, n = norms.shape
    z = np.array(z0, dtype=float)
    if in_log_space and np.any(z <= 0.0):
        raise ValueError("initial state must be positive for a log-space target")
    t = np.log(z) if in_log_space else z
    cur = q1 * t + q2 * t * t
    out = np.empty((b, n))
    accepted = np.zeros(b, dtype=np.int64)
    log_u = np.log(unifs)
    for i in range(n):
        zp = z + step * norms[:, i]
        if in_log_space:
            ok = zp > 0.0
            tp = np.log(np.where(ok, zp, 1.0))
            lp = np.where(ok, q1 * tp + q2 * tp * tp, -np.inf)
        else:
            lp = q1 * zp + q2 * zp * zp
        accept = log_u[:, i] < lp - cur
        z = np.where(accept, zp, z)
        cur = np.where(accept, lp, cur)
        accepted += accept
        out[:, i] = z
    return out, accepted
