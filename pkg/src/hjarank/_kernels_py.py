"""Vectorized numpy implementation of the per-cell kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled kernels are tested against. All functions take the
cell arrays ``k, i, j`` (sorted by key) and return fresh arrays.
"""

import numpy as np

BACKEND = "python"


def linear_predictor(gamma, mu, u, v, k, i, j):
    dv = v[i] - v[j]
    return gamma[k] * (mu[i] - mu[j]) + np.einsum("cm,cm->c", u[k], dv)


def logistic_terms(eta, n, ybar):
    """Return ``(nll, resid, w)`` with ``resid = n (p - ybar)`` and ``w = n p (1 - p)``."""
    softplus = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
    value = float(np.sum(n * (softplus - ybar * eta)))
    e = np.exp(-np.abs(eta))
    p = np.where(eta >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return value, n * (p - ybar), n * p * (1.0 - p)


def nll_value(eta, n, ybar):
    softplus = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
    return float(np.sum(n * (softplus - ybar * eta)))


def scatter_gradient(resid, gamma, mu, u, v, k, i, j):
    K, N, r = len(gamma), len(mu), u.shape[1]
    dmu = mu[i] - mu[j]
    dv = v[i] - v[j]
    g_gamma = np.bincount(k, weights=resid * dmu, minlength=K)
    a = resid * gamma[k]
    g_mu = np.bincount(i, weights=a, minlength=N) - np.bincount(j, weights=a, minlength=N)
    g_u = np.zeros((K, r))
    g_v = np.zeros((N, r))
    for m in range(r):
        g_u[:, m] = np.bincount(k, weights=resid * dv[:, m], minlength=K)
        b = resid * u[k, m]
        g_v[:, m] = np.bincount(i, weights=b, minlength=N) - np.bincount(j, weights=b, minlength=N)
    return g_gamma, g_mu, g_u, g_v


def judge_hessian(w, mu, v, k, i, j, n_judges):
    """Per-judge Hessian blocks over ``(gamma_k, U_k)``, shape (K, 1+r, 1+r)."""
    x = np.column_stack([mu[i] - mu[j], v[i] - v[j]])
    m = x.shape[1]
    outer = (w[:, None, None] * x[:, :, None] * x[:, None, :]).reshape(len(w), m * m)
    out = np.empty((n_judges, m * m))
    for e in range(m * m):
        out[:, e] = np.bincount(k, weights=outer[:, e], minlength=n_judges)
    return out.reshape(n_judges, m, m)


def item_hessian(w, gamma, u, k, i, j, n_items):
    """Hessian over the item block ``(mu_i, V_i)`` in item-major order, shape (N(1+r), N(1+r))."""
    N = n_items
    z = np.column_stack([gamma[k], u[k]])
    m = z.shape[1]
    outer = (w[:, None, None] * z[:, :, None] * z[:, None, :]).reshape(len(w), m * m)
    idx = np.concatenate([i * N + i, j * N + j, i * N + j, j * N + i])
    sgn = np.concatenate([np.ones(len(w)), np.ones(len(w)), -np.ones(len(w)), -np.ones(len(w))])
    stacked = np.tile(outer, (4, 1)) * sgn[:, None]
    h = np.empty((N * N, m * m))
    for e in range(m * m):
        h[:, e] = np.bincount(idx, weights=stacked[:, e], minlength=N * N)
    return h.reshape(N, N, m, m).transpose(0, 2, 1, 3).reshape(N * m, N * m)


def eta_jacobian(gamma, mu, u, v, k, i, j):
    """Dense matrix of ambient gradients of every cell's linear predictor (cells x dim)."""
    K, N, r = len(gamma), len(mu), u.shape[1]
    C = len(k)
    d = (K + N) * (1 + r)
    g = np.zeros((C, d))
    rows = np.arange(C)
    g[rows, k] = mu[i] - mu[j]
    g[rows, K + i] = gamma[k]
    g[rows, K + j] = -gamma[k]
    for m in range(r):
        g[rows, K + N + k * r + m] = v[i, m] - v[j, m]
        g[rows, K + N + K * r + i * r + m] += u[k, m]
        g[rows, K + N + K * r + j * r + m] -= u[k, m]
    return g


def fisher(w, gamma, mu, u, v, k, i, j):
    """Sum over cells of ``w * g g^T`` with ``g`` the ambient gradient of the linear predictor."""
    g = eta_jacobian(gamma, mu, u, v, k, i, j)
    return g.T @ (w[:, None] * g)
