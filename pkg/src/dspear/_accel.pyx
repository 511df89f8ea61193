# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: pitch difference function and GMM log-densities."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, M_PI

cnp.import_array()


def yin_difference(double[::1] x, int tau_max):
    """d[tau] = sum_{j<W} (x[j] - x[j+tau])^2, W = len(x) - tau_max."""
    cdef int n = x.shape[0]
    cdef int w = n - tau_max
    if w < 2:
        raise ValueError("need at least tau_max + 2 samples")
    out = np.zeros(tau_max + 1, dtype=np.float64)
    cdef double[::1] d = out
    cdef int tau, j
    cdef double acc, diff
    for tau in range(1, tau_max + 1):
        acc = 0.0
        for j in range(w):
            diff = x[j] - x[j + tau]
            acc += diff * diff
        d[tau] = acc
    return out


def gmm_log_densities(double[:, ::1] obs, double[::1] weights,
                      double[:, ::1] means, double[:, ::1] variances):
    """Per-row log-sum-exp of diagonal Gaussian mixture log densities."""
    cdef int n = obs.shape[0]
    cdef int d = obs.shape[1]
    cdef int k = weights.shape[0]
    if means.shape[1] != d or variances.shape[1] != d or means.shape[0] != k:
        raise ValueError("inconsistent mixture shapes")

    log_w_norm_arr = np.empty(k, dtype=np.float64)
    inv_var_arr = np.empty((k, d), dtype=np.float64)
    cdef double[::1] log_w_norm = log_w_norm_arr
    cdef double[:, ::1] inv_var = inv_var_arr
    cdef int ki, di
    cdef double s
    cdef double log_2pi = log(2.0 * M_PI)
    for ki in range(k):
        s = 0.0
        for di in range(d):
            inv_var[ki, di] = 1.0 / variances[ki, di]
            s += log(variances[ki, di])
        log_w_norm[ki] = log(weights[ki]) - 0.5 * (d * log_2pi + s)

    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ll = out
    comp_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] comp = comp_arr
    cdef int ni
    cdef double quad, diff, peak, acc
    for ni in range(n):
        peak = -1e300
        for ki in range(k):
            quad = 0.0
            for di in range(d):
                diff = obs[ni, di] - means[ki, di]
                quad += diff * diff * inv_var[ki, di]
            comp[ki] = log_w_norm[ki] - 0.5 * quad
            if comp[ki] > peak:
                peak = comp[ki]
        acc = 0.0
        for ki in range(k):
            acc += exp(comp[ki] - peak)
        ll[ni] = peak + log(acc)
    return out
