# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-cell kernels; same signatures and results as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs

cnp.import_array()

BACKEND = "cython"

ctypedef cnp.intp_t idx_t


def linear_predictor(const double[::1] gamma, const double[::1] mu, const double[:, ::1] u,
                     const double[:, ::1] v, const idx_t[::1] k, const idx_t[::1] i,
                     const idx_t[::1] j):
    cdef Py_ssize_t C = k.shape[0], r = u.shape[1], c, m
    cdef idx_t kk, ii, jj
    cdef double acc
    out = np.empty(C)
    cdef double[::1] eta = out
    for c in range(C):
        kk = k[c]; ii = i[c]; jj = j[c]
        acc = gamma[kk] * (mu[ii] - mu[jj])
        for m in range(r):
            acc += u[kk, m] * (v[ii, m] - v[jj, m])
        eta[c] = acc
    return out


def logistic_terms(const double[::1] eta, const double[::1] n, const double[::1] ybar):
    cdef Py_ssize_t C = eta.shape[0], c
    cdef double total = 0.0, x, e, p, sp
    resid_arr = np.empty(C)
    w_arr = np.empty(C)
    cdef double[::1] resid = resid_arr
    cdef double[::1] w = w_arr
    for c in range(C):
        x = eta[c]
        e = exp(-fabs(x))
        if x >= 0:
            p = 1.0 / (1.0 + e)
            sp = x + log1p(e)
        else:
            p = e / (1.0 + e)
            sp = log1p(e)
        total += n[c] * (sp - ybar[c] * x)
        resid[c] = n[c] * (p - ybar[c])
        w[c] = n[c] * p * (1.0 - p)
    return total, resid_arr, w_arr


def nll_value(const double[::1] eta, const double[::1] n, const double[::1] ybar):
    cdef Py_ssize_t C = eta.shape[0], c
    cdef double total = 0.0, x
    for c in range(C):
        x = eta[c]
        if x >= 0:
            total += n[c] * (x + log1p(exp(-x)) - ybar[c] * x)
        else:
            total += n[c] * (log1p(exp(x)) - ybar[c] * x)
    return total


def scatter_gradient(const double[::1] resid, const double[::1] gamma, const double[::1] mu,
                     const double[:, ::1] u, const double[:, ::1] v, const idx_t[::1] k,
                     const idx_t[::1] i, const idx_t[::1] j):
    cdef Py_ssize_t K = gamma.shape[0], N = mu.shape[0], r = u.shape[1]
    cdef Py_ssize_t C = k.shape[0], c, m
    cdef idx_t kk, ii, jj
    cdef double rc, a
    gg_arr = np.zeros(K)
    gm_arr = np.zeros(N)
    gu_arr = np.zeros((K, r))
    gv_arr = np.zeros((N, r))
    cdef double[::1] gg = gg_arr
    cdef double[::1] gm = gm_arr
    cdef double[:, ::1] gu = gu_arr
    cdef double[:, ::1] gv = gv_arr
    for c in range(C):
        kk = k[c]; ii = i[c]; jj = j[c]
        rc = resid[c]
        gg[kk] += rc * (mu[ii] - mu[jj])
        a = rc * gamma[kk]
        gm[ii] += a
        gm[jj] -= a
        for m in range(r):
            gu[kk, m] += rc * (v[ii, m] - v[jj, m])
            a = rc * u[kk, m]
            gv[ii, m] += a
            gv[jj, m] -= a
    return gg_arr, gm_arr, gu_arr, gv_arr


def judge_hessian(const double[::1] w, const double[::1] mu, const double[:, ::1] v,
                  const idx_t[::1] k, const idx_t[::1] i, const idx_t[::1] j, Py_ssize_t n_judges):
    cdef Py_ssize_t r = v.shape[1], dm = r + 1, C = k.shape[0], c, a, b
    cdef idx_t kk, ii, jj
    out = np.zeros((n_judges, dm, dm))
    cdef double[:, :, ::1] h = out
    cdef double[::1] x = np.empty(dm)
    cdef double wc
    for c in range(C):
        kk = k[c]; ii = i[c]; jj = j[c]
        wc = w[c]
        x[0] = mu[ii] - mu[jj]
        for a in range(r):
            x[a + 1] = v[ii, a] - v[jj, a]
        for a in range(dm):
            for b in range(a, dm):
                h[kk, a, b] += wc * x[a] * x[b]
    for kk in range(n_judges):
        for a in range(dm):
            for b in range(a):
                h[kk, a, b] = h[kk, b, a]
    return out


def item_hessian(const double[::1] w, const double[::1] gamma, const double[:, ::1] u,
                 const idx_t[::1] k, const idx_t[::1] i, const idx_t[::1] j, Py_ssize_t n_items):
    cdef Py_ssize_t r = u.shape[1], dm = r + 1, C = k.shape[0], c, a, b
    cdef idx_t kk, ii, jj
    out = np.zeros((n_items * dm, n_items * dm))
    cdef double[:, ::1] h = out
    cdef double[::1] z = np.empty(dm)
    cdef double val
    for c in range(C):
        kk = k[c]; ii = i[c]; jj = j[c]
        z[0] = gamma[kk]
        for a in range(r):
            z[a + 1] = u[kk, a]
        for a in range(dm):
            for b in range(dm):
                val = w[c] * z[a] * z[b]
                h[ii * dm + a, ii * dm + b] += val
                h[jj * dm + a, jj * dm + b] += val
                h[ii * dm + a, jj * dm + b] -= val
                h[jj * dm + a, ii * dm + b] -= val
    return out


def eta_jacobian(const double[::1] gamma, const double[::1] mu, const double[:, ::1] u,
                 const double[:, ::1] v, const idx_t[::1] k, const idx_t[::1] i,
                 const idx_t[::1] j):
    cdef Py_ssize_t K = gamma.shape[0], N = mu.shape[0], r = u.shape[1]
    cdef Py_ssize_t C = k.shape[0], d = (K + N) * (1 + r), c, m
    cdef idx_t kk, ii, jj
    out = np.zeros((C, d))
    cdef double[:, ::1] g = out
    for c in range(C):
        kk = k[c]; ii = i[c]; jj = j[c]
        g[c, kk] = mu[ii] - mu[jj]
        g[c, K + ii] = gamma[kk]
        g[c, K + jj] = -gamma[kk]
        for m in range(r):
            g[c, K + N + kk * r + m] = v[ii, m] - v[jj, m]
            g[c, K + N + K * r + ii * r + m] = u[kk, m]
            g[c, K + N + K * r + jj * r + m] = -u[kk, m]
    return out


def fisher(const double[::1] w, const double[::1] gamma, const double[::1] mu,
           const double[:, ::1] u, const double[:, ::1] v, const idx_t[::1] k,
           const idx_t[::1] i, const idx_t[::1] j):
    cdef Py_ssize_t K = gamma.shape[0], N = mu.shape[0], r = u.shape[1]
    cdef Py_ssize_t C = k.shape[0], d = (K + N) * (1 + r), nnz = 3 + 3 * r
    cdef Py_ssize_t c, m, a, b
    cdef idx_t kk, ii, jj
    out = np.zeros((d, d))
    cdef double[:, ::1] f = out
    cdef idx_t[::1] pos = np.empty(nnz, dtype=np.intp)
    cdef double[::1] val = np.empty(nnz)
    cdef double wc
    for c in range(C):
        kk = k[c]; ii = i[c]; jj = j[c]
        wc = w[c]
        pos[0] = kk; val[0] = mu[ii] - mu[jj]
        pos[1] = K + ii; val[1] = gamma[kk]
        pos[2] = K + jj; val[2] = -gamma[kk]
        for m in range(r):
            pos[3 + m] = K + N + kk * r + m
            val[3 + m] = v[ii, m] - v[jj, m]
            pos[3 + r + m] = K + N + K * r + ii * r + m
            val[3 + r + m] = u[kk, m]
            pos[3 + 2 * r + m] = K + N + K * r + jj * r + m
            val[3 + 2 * r + m] = -u[kk, m]
        for a in range(nnz):
            for b in range(nnz):
                f[pos[a], pos[b]] += wc * val[a] * val[b]
    return out
