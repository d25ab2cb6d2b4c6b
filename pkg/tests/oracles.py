"""Independent reference computations used as test oracles.

Nothing here imports the package's likelihood, solver or kernels.
"""

import numpy as np
from scipy.special import expit


def score_matrix(gamma, mu, u, v):
    return np.outer(gamma, mu) + np.asarray(u).reshape(len(gamma), -1) @ np.asarray(v).reshape(len(mu), -1).T


def brute_nll(s, k, i, j, n, y):
    """Binomial negative log-likelihood (constants dropped), one cell at a time."""
    total = 0.0
    for kk, ii, jj, nn, yy in zip(k, i, j, n, y):
        eta = s[kk, ii] - s[kk, jj]
        p = expit(eta)
        total -= yy * np.log(p) + (nn - yy) * np.log1p(-p)
    return total


def central_difference(f, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for t in range(len(x)):
        e = np.zeros_like(x)
        e[t] = step
        g[t] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def btl_newton(n_items, i, j, n, y, tol=1e-12, max_iter=200):
    """Damped Newton BTL fit with the first score pinned at zero; returns centered scores."""
    i, j, n, y = map(np.asarray, (i, j, n, y))
    free = np.arange(1, n_items)

    def full(z):
        return np.concatenate([[0.0], z])

    def value(z):
        s = full(z)
        eta = s[i] - s[j]
        return float(np.sum(n * np.logaddexp(0.0, eta) - y * eta))

    z = np.zeros(n_items - 1)
    for _ in range(max_iter):
        s = full(z)
        p = expit(s[i] - s[j])
        r = n * p - y
        w = n * p * (1 - p)
        g = np.zeros(n_items)
        np.add.at(g, i, r)
        np.add.at(g, j, -r)
        h = np.zeros((n_items, n_items))
        np.add.at(h, (i, i), w)
        np.add.at(h, (j, j), w)
        np.add.at(h, (i, j), -w)
        np.add.at(h, (j, i), -w)
        g, h = g[free], h[np.ix_(free, free)]
        if np.linalg.norm(g) < tol:
            break
        step = np.linalg.solve(h, g)
        t, f0 = 1.0, value(z)
        while value(z - t * step) > f0 - 1e-4 * t * (g @ step) and t > 1e-10:
            t *= 0.5
        z = z - t * step
    s = full(z)
    return s - s.mean()


def dense_fisher(gamma, mu, u, v, k, i, j, n):
    """Sum of (n/n_total) p(1-p) g g^T with g built entry by entry."""
    gamma, mu = np.asarray(gamma, float), np.asarray(mu, float)
    K, N = len(gamma), len(mu)
    u = np.asarray(u, float).reshape(K, -1)
    v = np.asarray(v, float).reshape(N, -1)
    r = u.shape[1]
    d = K + N + r * (K + N)
    s = score_matrix(gamma, mu, u, v)
    out = np.zeros((d, d))
    n_total = float(np.sum(n))
    for kk, ii, jj, nn in zip(k, i, j, n):
        g = np.zeros(d)
        g[kk] = mu[ii] - mu[jj]
        g[K + ii] += gamma[kk]
        g[K + jj] -= gamma[kk]
        for m in range(r):
            g[K + N + kk * r + m] = v[ii, m] - v[jj, m]
            g[K + N + K * r + ii * r + m] += u[kk, m]
            g[K + N + K * r + jj * r + m] -= u[kk, m]
        p = expit(s[kk, ii] - s[kk, jj])
        out += nn / n_total * p * (1 - p) * np.outer(g, g)
    return out


def columns_match_up_to_sign(a, b, atol):
    """Max-abs difference after flipping each column of ``a`` to best match ``b``."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    worst = 0.0
    for m in range(a.shape[1]):
        worst = max(worst, min(np.abs(a[:, m] - b[:, m]).max(), np.abs(a[:, m] + b[:, m]).max()))
    return worst <= atol, worst
