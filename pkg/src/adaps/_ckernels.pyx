# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GMM kernels; same contracts as ``adaps._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, M_PI

cnp.import_array()


cdef inline void _responsibilities(
    const double[::1] x, const double[:, ::1] means, const double[::1] logw,
    const double[::1] var, double sa, int n, double[::1] w,
) noexcept nogil:
    cdef Py_ssize_t k, i
    cdef Py_ssize_t K = means.shape[0]
    cdef double d, acc, top, total
    for k in range(K):
        acc = 0.0
        for i in range(n):
            d = sa * means[k, i] - x[i]
            acc += d * d
        w[k] = logw[k] - 0.5 * n * log(2.0 * M_PI * var[k]) - 0.5 * acc / var[k]
    top = w[0]
    for k in range(1, K):
        if w[k] > top:
            top = w[k]
    total = 0.0
    for k in range(K):
        w[k] = exp(w[k] - top)
        total += w[k]
    for k in range(K):
        w[k] /= total


def gmm_denoise(x_in, means_in, logw_in, variances_in, double abar):
    cdef const double[:, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef const double[:, ::1] means = np.ascontiguousarray(means_in, dtype=np.float64)
    cdef const double[::1] logw = np.ascontiguousarray(logw_in, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], K = means.shape[0]
    var_arr = abar * np.ascontiguousarray(variances_in, dtype=np.float64) + (1.0 - abar)
    cdef const double[::1] var = var_arr
    eps_arr = np.empty((B, n))
    x0_arr = np.empty((B, n))
    cdef double[:, ::1] eps = eps_arr
    cdef double[:, ::1] x0 = x0_arr
    cdef double[::1] w = np.empty(K)
    cdef double sa = sqrt(abar), som = sqrt(1.0 - abar), oma = 1.0 - abar
    cdef double score
    cdef Py_ssize_t b, k, i
    with nogil:
        for b in range(B):
            _responsibilities(x[b], means, logw, var, sa, <int>n, w)
            for i in range(n):
                score = 0.0
                for k in range(K):
                    score += w[k] * (sa * means[k, i] - x[b, i]) / var[k]
                eps[b, i] = -som * score
                x0[b, i] = (x[b, i] + oma * score) / sa
    return eps_arr, x0_arr


def gmm_x0_vjp(x_in, v_in, means_in, logw_in, variances_in, double abar):
    cdef const double[:, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef const double[:, ::1] v = np.ascontiguousarray(v_in, dtype=np.float64)
    cdef const double[:, ::1] means = np.ascontiguousarray(means_in, dtype=np.float64)
    cdef const double[::1] logw = np.ascontiguousarray(logw_in, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], K = means.shape[0]
    var_arr = abar * np.ascontiguousarray(variances_in, dtype=np.float64) + (1.0 - abar)
    cdef const double[::1] var = var_arr
    out_arr = np.empty((B, n))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] w = np.empty(K)
    cdef double[::1] p = np.empty(K)
    cdef double sa = sqrt(abar), oma = 1.0 - abar
    cdef double c, sv, s_i, u, hv, acc
    cdef Py_ssize_t b, k, i
    with nogil:
        for b in range(B):
            _responsibilities(x[b], means, logw, var, sa, <int>n, w)
            c = 0.0
            sv = 0.0
            for k in range(K):
                acc = 0.0
                for i in range(n):
                    acc += (sa * means[k, i] - x[b, i]) * v[b, i]
                p[k] = acc / var[k]
                c += w[k] / var[k]
                sv += w[k] * p[k]
            for i in range(n):
                s_i = 0.0
                hv = -c * v[b, i]
                for k in range(K):
                    u = (sa * means[k, i] - x[b, i]) / var[k]
                    s_i += w[k] * u
                    hv += w[k] * p[k] * u
                hv -= s_i * sv
                out[b, i] = (v[b, i] + oma * hv) / sa
    return out_arr
