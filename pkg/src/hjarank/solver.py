"""Constrained maximum likelihood for the heterogeneous judge-aware model.

The fit alternates two proximal block updates (judge block ``(gamma, U)``,
item block ``(mu, V)``), each solved exactly on its affine constraint set,
and re-anchors the result to the canonical representative after every
sweep. Re-anchoring leaves the score matrix, hence the likelihood,
unchanged, so the likelihood trace is nonincreasing.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .data import AggregatedCounts, check_connectivity
from .decomposition import (DELTA_MU, DELTA_SIGMA, HjaParams, decompose, max_rank, reanchor)
from .exceptions import (ConnectivityError, RankTooLarge, ReanchorFailed, SolverStalled,
                         ValidationError)
from .likelihood import nll, nll_gradient

log = logging.getLogger(__name__)

MAX_GUARD_FAILURES = 20


@dataclass(frozen=True)
class SolverConfig:
    rank: int = 1
    tau: float = 30.0
    tau_growth: float = 10.0
    tol: float = 1e-8
    grad_tol: float | None = None
    max_iters: int = 500
    inner_tol: float = 1e-9
    max_inner: int = 100
    inner_solver: str = "newton"
    delta_mu: float = DELTA_MU
    delta_sigma: float = DELTA_SIGMA
    init_ridge: float = 1e-3
    allow_disconnected: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0 or self.tau_growth <= 1:
            raise ValidationError("tau must be positive and tau_growth greater than one")
        if self.rank < 0:
            raise ValidationError("rank must be nonnegative")
        if self.grad_tol is not None and self.grad_tol <= 0:
            raise ValidationError("grad_tol must be positive")
        if self.inner_solver not in ("newton", "lbfgs"):
            raise ValidationError(f"unknown inner solver {self.inner_solver!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    params: HjaParams
    nll_trace: list[float]
    converged: bool
    iterations: int
    guard_failures: int
    final_nll: float
    tau_final: float = 0.0
    config: SolverConfig | None = None
    block_gradient_norms: list[tuple[float, float]] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.params.rank

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "nll_trace": list(self.nll_trace),
            "converged": self.converged,
            "iterations": self.iterations,
            "guard_failures": self.guard_failures,
            "final_nll": self.final_nll,
            "tau_final": self.tau_final,
        }


# ---------------------------------------------------------------------------
# affine-constrained Newton


@lru_cache(maxsize=64)
def _elimination(n_blocks: int, m: int) -> np.ndarray:
    """Basis of ``{x in R^(n_blocks*m): sum of the m-blocks = 0}`` eliminating the last block."""
    e = np.zeros((n_blocks * m, (n_blocks - 1) * m))
    e[:-m] = np.eye((n_blocks - 1) * m)
    e[-m:] = -np.tile(np.eye(m), n_blocks - 1)
    e.setflags(write=False)
    return e


def _project_sum_zero(g: np.ndarray, m: int) -> np.ndarray:
    blocks = g.reshape(-1, m)
    return (blocks - blocks.mean(axis=0)).ravel()


def _newton_affine(x0, anchor, tau, value_fn, grad_hess_fn, m, tol, max_iter):
    """Minimize ``f(x) + tau/2 ||x - anchor||^2`` over ``x0 + {sum of m-blocks = 0}``.

    ``value_fn(x)`` returns ``f``; ``grad_hess_fn(x)`` returns ``(f, grad, hess)``.
    Returns ``(x, projected gradient norm)``.
    """
    x = x0.copy()
    e = _elimination(len(x) // m, m)
    eye = np.eye(len(x))
    f, g, h = grad_hess_fn(x)
    obj = f + 0.5 * tau * np.sum((x - anchor) ** 2)
    gnorm = np.inf
    for _ in range(max_iter):
        g = g + tau * (x - anchor)
        gnorm = float(np.linalg.norm(_project_sum_zero(g, m)))
        if gnorm < tol:
            break
        gz = e.T @ g
        hz = e.T @ (h + tau * eye) @ e
        dz = -np.linalg.solve(hz, gz)
        dx = e @ dz
        decrement = -float(gz @ dz)
        if decrement < 1e-15 * max(1.0, abs(obj)):
            # step below round-off of the objective: take it without a line search
            x = x + dx
            f, g, h = grad_hess_fn(x)
            obj = f + 0.5 * tau * np.sum((x - anchor) ** 2)
            continue
        step = 1.0
        for _ls in range(60):
            x_new = x + step * dx
            obj_new = value_fn(x_new) + 0.5 * tau * np.sum((x_new - anchor) ** 2)
            if obj_new <= obj - 1e-4 * step * decrement:
                break
            step *= 0.5
        else:
            break
        x, obj = x_new, obj_new
        f, g, h = grad_hess_fn(x)
    else:
        g = g + tau * (x - anchor)
        gnorm = float(np.linalg.norm(_project_sum_zero(g, m)))
    return x, gnorm


def _lbfgs_affine(x0, anchor, tau, value_grad_fn, m, tol, max_iter):
    e = _elimination(len(x0) // m, m)

    def fun(z):
        x = x0 + e @ z
        f, g = value_grad_fn(x)
        g = g + tau * (x - anchor)
        return f + 0.5 * tau * np.sum((x - anchor) ** 2), e.T @ g

    res = minimize(fun, np.zeros(e.shape[1]), jac=True, method="L-BFGS-B",
                   options={"gtol": tol, "ftol": 1e-15, "maxiter": max_iter * 20, "maxcor": 20})
    x = x0 + e @ res.x
    _, g = value_grad_fn(x)
    g = g + tau * (x - anchor)
    return x, float(np.linalg.norm(_project_sum_zero(g, m)))


# ---------------------------------------------------------------------------
# block updates


def _judge_block(counts, gamma, mu, u, v, tau, config):
    K, r = len(gamma), u.shape[1]
    m = r + 1
    k, i, j, n, yb = counts.k, counts.i, counts.j, counts.n, counts.ybar
    anchor = np.column_stack([gamma, u]).ravel()

    def unpack(x):
        xm = x.reshape(K, m)
        return np.ascontiguousarray(xm[:, 0]), np.ascontiguousarray(xm[:, 1:])

    def value(x):
        g_, u_ = unpack(x)
        return kernels.nll_value(kernels.linear_predictor(g_, mu, u_, v, k, i, j), n, yb)

    def value_grad(x):
        g_, u_ = unpack(x)
        eta = kernels.linear_predictor(g_, mu, u_, v, k, i, j)
        f, resid, w = kernels.logistic_terms(eta, n, yb)
        gg, _, gu, _ = kernels.scatter_gradient(resid, g_, mu, u_, v, k, i, j)
        return f, np.column_stack([gg, gu]).ravel(), w

    def grad_hess(x):
        f, grad, w = value_grad(x)
        blocks = kernels.judge_hessian(w, mu, v, k, i, j, K)
        h = np.zeros((K * m, K * m))
        for kk in range(K):
            h[kk * m:(kk + 1) * m, kk * m:(kk + 1) * m] = blocks[kk]
        return f, grad, h

    if config.inner_solver == "newton":
        x, gnorm = _newton_affine(anchor, anchor, tau, value, grad_hess, m,
                                  config.inner_tol, config.max_inner)
    else:
        x, gnorm = _lbfgs_affine(anchor, anchor, tau, lambda x: value_grad(x)[:2], m,
                                 config.inner_tol, config.max_inner)
    g_new, u_new = unpack(x)
    return g_new, u_new, gnorm


def _item_block(counts, gamma, mu, u, v, tau, config):
    N, r = len(mu), v.shape[1]
    m = r + 1
    k, i, j, n, yb = counts.k, counts.i, counts.j, counts.n, counts.ybar
    anchor = np.column_stack([mu, v]).ravel()

    def unpack(x):
        xm = x.reshape(N, m)
        return np.ascontiguousarray(xm[:, 0]), np.ascontiguousarray(xm[:, 1:])

    def value(x):
        mu_, v_ = unpack(x)
        return kernels.nll_value(kernels.linear_predictor(gamma, mu_, u, v_, k, i, j), n, yb)

    def value_grad(x):
        mu_, v_ = unpack(x)
        eta = kernels.linear_predictor(gamma, mu_, u, v_, k, i, j)
        f, resid, w = kernels.logistic_terms(eta, n, yb)
        _, gm, _, gv = kernels.scatter_gradient(resid, gamma, mu_, u, v_, k, i, j)
        return f, np.column_stack([gm, gv]).ravel(), w

    def grad_hess(x):
        f, grad, w = value_grad(x)
        return f, grad, kernels.item_hessian(w, gamma, u, k, i, j, N)

    if config.inner_solver == "newton":
        x, gnorm = _newton_affine(anchor, anchor, tau, value, grad_hess, m,
                                  config.inner_tol, config.max_inner)
    else:
        x, gnorm = _lbfgs_affine(anchor, anchor, tau, lambda x: value_grad(x)[:2], m,
                                 config.inner_tol, config.max_inner)
    mu_new, v_new = unpack(x)
    return mu_new, v_new, gnorm


# ---------------------------------------------------------------------------
# BTL fits


def _btl_scores(counts: AggregatedCounts, ridge: float = 0.0, tol: float = 1e-9,
                max_iter: int = 200) -> np.ndarray:
    """Centered BTL scores of single-judge counts by damped Newton on the centered subspace."""
    N = counts.n_items
    k = np.zeros(counts.n_cells, dtype=np.intp)
    one = np.ones(1)
    empty_u = np.zeros((1, 0))
    empty_v = np.zeros((N, 0))
    i, j, n, yb = counts.i, counts.j, counts.n, counts.ybar

    def value(s):
        return kernels.nll_value(kernels.linear_predictor(one, s, empty_u, empty_v, k, i, j), n, yb) \
            + 0.5 * ridge * s @ s

    def grad_hess(s):
        eta = kernels.linear_predictor(one, s, empty_u, empty_v, k, i, j)
        f, resid, w = kernels.logistic_terms(eta, n, yb)
        _, gm, _, _ = kernels.scatter_gradient(resid, one, s, empty_u, empty_v, k, i, j)
        h = kernels.item_hessian(w, one, empty_u, k, i, j, N)
        return f + 0.5 * ridge * s @ s, gm + ridge * s, h + ridge * np.eye(N)

    s = np.zeros(N)
    s, _ = _newton_affine(s, s, 0.0, value, grad_hess, 1, tol, max_iter)
    return s - s.mean()


def fit_pooled_btl(counts: AggregatedCounts, ridge: float = 0.0, tol: float = 1e-9) -> np.ndarray:
    """Centered BTL score vector of the judge-summed counts."""
    pooled = counts.pooled()
    report = check_connectivity(pooled)
    if not report.pooled_connected:
        raise ConnectivityError(
            f"pooled comparison graph is disconnected: components {report.pooled_components}",
            components=report.pooled_components)
    return _btl_scores(pooled, ridge=ridge, tol=tol)


def fit_judgewise_btl(counts: AggregatedCounts, k: int, ridge: float = 0.0, tol: float = 1e-9,
                      fallback: np.ndarray | None = None) -> np.ndarray:
    """Centered BTL scores from judge ``k``'s comparisons only.

    When the judge's graph is disconnected, ``fallback`` is returned (with a
    warning) if supplied; otherwise :class:`ConnectivityError` is raised.
    """
    sub = counts.judge_subset(k)
    report = check_connectivity(sub)
    if not report.pooled_connected:
        if fallback is None:
            raise ConnectivityError(
                f"judge {counts.id_map.judges[k]!r} has a disconnected comparison graph",
                components=report.pooled_components, judge=k)
        warnings.warn(f"judge {counts.id_map.judges[k]!r} has a disconnected comparison graph; "
                      "using the pooled scores for its row", stacklevel=2)
        return np.array(fallback, dtype=float)
    return _btl_scores(sub, ridge=ridge, tol=tol)


def judgewise_score_matrix(counts: AggregatedCounts, ridge: float = 0.0,
                           fallback: np.ndarray | None = None) -> np.ndarray:
    return np.vstack([fit_judgewise_btl(counts, k, ridge=ridge, fallback=fallback)
                      for k in range(counts.n_judges)])


# ---------------------------------------------------------------------------
# initialization and the main loop


def _check_rank(counts: AggregatedCounts, rank: int) -> None:
    r_max = max_rank(counts.n_judges, counts.n_items)
    if rank > r_max:
        raise RankTooLarge(rank, r_max)


def initialize(counts: AggregatedCounts, rank: int, ridge: float = 1e-3,
               delta_mu: float = DELTA_MU, delta_sigma: float = DELTA_SIGMA) -> HjaParams:
    """Starting point from pooled and judgewise BTL fits, re-anchored to the canonical chart."""
    _check_rank(counts, rank)
    K, N = counts.n_judges, counts.n_items
    mu0 = fit_pooled_btl(counts, ridge=ridge)
    mu0 = mu0 - mu0.mean()
    gamma0 = np.ones(K)
    s_tilde = judgewise_score_matrix(counts, ridge=ridge, fallback=mu0)
    resid = s_tilde - np.outer(gamma0, mu0)
    resid = resid - resid.mean(axis=0)
    p, sig, qt = np.linalg.svd(resid, full_matrices=False)
    r = rank
    while True:
        root = np.sqrt(sig[:r])
        u0 = p[:, :r] * root
        v0 = qt[:r].T * root
        try:
            return reanchor(gamma0, mu0, u0, v0, delta_mu=delta_mu, delta_sigma=delta_sigma)
        except ReanchorFailed as exc:
            if r == 0 or exc.guard == "norm":
                raise
            warnings.warn(f"initial re-anchoring failed at rank {r}; retrying at rank {r - 1}",
                          stacklevel=2)
            r -= 1


def affine_gradient_norm(params: HjaParams, counts: AggregatedCounts) -> float:
    """Max-abs NLL gradient after removing the components normal to the centering constraints."""
    g = nll_gradient(params, counts)
    parts = [g.gamma - g.gamma.mean(), g.mu - g.mu.mean(),
             g.u - g.u.mean(axis=0), g.v - g.v.mean(axis=0)]
    return max(float(np.abs(x).max(initial=0.0)) for x in parts)


def _require_connected(counts: AggregatedCounts, allow_disconnected: bool) -> None:
    report = check_connectivity(counts)
    if not report.pooled_connected:
        raise ConnectivityError(
            f"pooled comparison graph is disconnected: components {report.pooled_components}",
            components=report.pooled_components)
    if not allow_disconnected and not report.all_connected:
        bad = [counts.id_map.judges[k] for k, ok in enumerate(report.per_judge_connected) if not ok]
        raise ConnectivityError(f"judges with disconnected comparison graphs: {bad}",
                                components=[report.components[k] for k, ok in
                                            enumerate(report.per_judge_connected) if not ok])
    if allow_disconnected and not report.all_connected:
        warnings.warn("fitting with disconnected judge graphs: identification relies on the pooled "
                      "graph and the structural constraints; inference guarantees are weaker",
                      stacklevel=3)


def fit(counts: AggregatedCounts, config: SolverConfig = SolverConfig(),
        init: HjaParams | None = None) -> FitResult:
    """Proximal anchored alternating maximum likelihood at a fixed heterogeneity rank."""
    _check_rank(counts, config.rank)
    _require_connected(counts, config.allow_disconnected)
    theta = init if init is not None else initialize(
        counts, config.rank, ridge=config.init_ridge,
        delta_mu=config.delta_mu, delta_sigma=config.delta_sigma)

    current = nll(theta, counts)
    trace = [current]
    tau = config.tau
    guard_failures = 0
    iterations = 0
    converged = False
    gnorms = []
    while iterations < config.max_iters:
        g_t, u_t, gj = _judge_block(counts, theta.gamma, theta.mu, theta.u, theta.v, tau, config)
        mu_t, v_t, gi = _item_block(counts, g_t, theta.mu, u_t, theta.v, tau, config)
        try:
            candidate = reanchor(g_t, mu_t, u_t, v_t, config.delta_mu, config.delta_sigma)
        except ReanchorFailed as exc:
            guard_failures += 1
            if guard_failures > MAX_GUARD_FAILURES:
                raise SolverStalled(f"re-anchoring failed {guard_failures} times; last: {exc}") from exc
            tau *= config.tau_growth
            log.debug("re-anchor failed (%s); tau -> %g", exc.guard, tau)
            continue
        iterations += 1
        new = nll(candidate, counts)
        theta = candidate
        trace.append(new)
        gnorms.append((gj, gi))
        if abs(new - current) / (1.0 + abs(current)) < config.tol and (
                config.grad_tol is None or affine_gradient_norm(theta, counts) <= config.grad_tol):
            converged = True
            current = new
            break
        current = new

    return FitResult(params=theta, nll_trace=trace, converged=converged, iterations=iterations,
                     guard_failures=guard_failures, final_nll=current, tau_final=tau,
                     config=config, block_gradient_norms=gnorms)


def fit_baseline(counts: AggregatedCounts, kind: str, rank: int = 1,
                 config: SolverConfig = SolverConfig()) -> HjaParams:
    """Comparison estimators.

    ``pooled``: one BTL score vector shared by all judges. ``sensitivity_only``:
    the rank-0 model ``gamma mu^T``. ``btl_svd``: judgewise BTL score matrix,
    truncated to rank ``rank + 1`` by SVD and decomposed at rank ``rank``.
    """
    if kind == "pooled":
        mu = fit_pooled_btl(counts)
        return HjaParams(np.ones(counts.n_judges), mu, np.zeros((counts.n_judges, 0)),
                         np.zeros((counts.n_items, 0)))
    if kind == "sensitivity_only":
        return fit(counts, replace(config, rank=0)).params
    if kind == "btl_svd":
        _check_rank(counts, rank)
        s_hat = judgewise_score_matrix(counts, ridge=config.init_ridge)
        p, sig, qt = np.linalg.svd(s_hat, full_matrices=False)
        keep = min(rank + 1, len(sig))
        s_trunc = (p[:, :keep] * sig[:keep]) @ qt[:keep]
        s_trunc -= s_trunc.mean(axis=1, keepdims=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return decompose(s_trunc, rank=rank)
    raise ValidationError(f"unknown baseline {kind!r}")
