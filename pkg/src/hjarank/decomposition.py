"""Consensus-plus-heterogeneity parameters and the maps between them and score matrices.

A row-centered score matrix ``S`` (K judges x N items) is written as
``S = gamma mu^T + U V^T``. The canonical representative satisfies

* ``1^T mu = 0`` and ``V^T 1 = 0``
* ``1^T U = 0`` and ``1^T gamma = K``
* ``mu^T V = 0``
* ``V^T V / N = I`` and ``U^T U / K`` diagonal, strictly decreasing and positive
* the first non-negligible entry of each column of ``U`` is positive
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (AmbiguousRank, DegenerateConsensus, RankTooLarge, ReanchorFailed,
                         ValidationError)

CONSTRAINT_TOL = 1e-8
AUTO_RANK_RTOL = 1e-10
DELTA_MU = 1e-6
DELTA_SIGMA = 1e-8
SIGN_EPS = 1e-12


def max_rank(n_judges: int, n_items: int) -> int:
    return max(0, min(n_judges - 1, n_items - 2))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HjaParams:
    """Parameter tuple ``(gamma, mu, U, V)``; ``u`` is K x r and ``v`` is N x r."""

    gamma: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        gamma, mu = _frozen(self.gamma).ravel(), _frozen(self.mu).ravel()
        K, N = len(gamma), len(mu)
        u = _frozen(self.u).reshape(K, -1).copy() if np.size(self.u) else np.zeros((K, 0))
        v = _frozen(self.v).reshape(N, -1).copy() if np.size(self.v) else np.zeros((N, 0))
        if u.shape[1] != v.shape[1]:
            raise ValidationError(f"U has {u.shape[1]} columns but V has {v.shape[1]}")
        for name, arr in (("gamma", gamma), ("mu", mu), ("u", u), ("v", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def n_judges(self) -> int:
        return len(self.gamma)

    @property
    def n_items(self) -> int:
        return len(self.mu)

    @property
    def dim(self) -> int:
        """Length of the flattened ambient vector."""
        return (self.n_judges + self.n_items) * (1 + self.rank)

    def flatten(self) -> np.ndarray:
        """Ambient vector in the order gamma, mu, U (row-major), V (row-major)."""
        return np.concatenate([self.gamma, self.mu, self.u.ravel(), self.v.ravel()])

    @classmethod
    def unflatten(cls, x: np.ndarray, n_judges: int, n_items: int, rank: int) -> "HjaParams":
        K, N, r = n_judges, n_items, rank
        x = np.asarray(x, dtype=float)
        if x.shape != ((K + N) * (1 + r),):
            raise ValidationError("flattened vector has the wrong length")
        return cls(x[:K], x[K:K + N], x[K + N:K + N + K * r].reshape(K, r),
                   x[K + N + K * r:].reshape(N, r))

    def score_matrix(self) -> np.ndarray:
        return compose(self)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "mu": self.mu.tolist(),
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HjaParams":
        K, N, r = len(d["gamma"]), len(d["mu"]), int(d.get("rank", 0))
        return cls(d["gamma"], d["mu"], np.reshape(d["u"], (K, r)), np.reshape(d["v"], (N, r)))


def compose(params: HjaParams) -> np.ndarray:
    """Score matrix ``gamma mu^T + U V^T``."""
    return np.outer(params.gamma, params.mu) + params.u @ params.v.T


def sign_anchor(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip (U column, V column) pairs so each U column starts with a positive entry."""
    u, v = np.array(u, dtype=float), np.array(v, dtype=float)
    for m in range(u.shape[1]):
        nz = np.flatnonzero(np.abs(u[:, m]) > SIGN_EPS)
        if len(nz) and u[nz[0], m] < 0:
            u[:, m] *= -1.0
            v[:, m] *= -1.0
    return u, v


def decompose(s: np.ndarray, rank: int | str | None = "auto", tol: float = CONSTRAINT_TOL) -> HjaParams:
    """Canonical parameters of a row-centered score matrix.

    ``rank`` truncates the heterogeneity SVD; ``"auto"`` keeps every singular
    value above ``1e-10`` times the largest singular value of ``s``.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2:
        raise ValidationError("score matrix must be two-dimensional")
    K, N = s.shape
    scale = max(1.0, float(np.abs(s).max(initial=0.0)))
    if np.abs(s.sum(axis=1)).max(initial=0.0) > tol * scale * N:
        raise ValidationError("score matrix rows must sum to zero")
    colsum = s.sum(axis=0)
    if np.linalg.norm(colsum) <= tol:
        raise DegenerateConsensus("column sums vanish: the model has no consensus direction")

    mu = colsum / K
    gamma = s @ mu / (mu @ mu)
    resid = s - np.outer(gamma, mu)
    p, sig, qt = np.linalg.svd(resid, full_matrices=False)

    r_max = max_rank(K, N)
    if rank is None or rank == "auto":
        ref = np.linalg.norm(s, 2)
        r = int(np.sum(sig > AUTO_RANK_RTOL * ref)) if ref > 0 else 0
        r = min(r, r_max)
    else:
        r = int(rank)
        if r < 0:
            raise ValidationError("rank must be nonnegative")
        if r > r_max:
            raise RankTooLarge(r, r_max)

    if r > 0:
        sig_ext = np.append(sig, 0.0)
        gaps = sig_ext[:r] - sig_ext[1:r + 1]
        if np.any(gaps <= tol * max(1.0, sig_ext[0])):
            warnings.warn(f"singular values are numerically tied at or above the rank-{r} cut",
                          AmbiguousRank, stacklevel=2)

    u = p[:, :r] * sig[:r] / np.sqrt(N)
    v = np.sqrt(N) * qt[:r].T
    u, v = sign_anchor(u, v)
    return HjaParams(gamma, mu, u, v)


@dataclass(frozen=True)
class ConstraintReport:
    residuals: dict
    tol: float

    @property
    def passed(self) -> bool:
        return all(val <= self.tol for val in self.residuals.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, val in self.residuals.items() if val > self.tol]

    def to_dict(self) -> dict:
        return {"tol": self.tol, "passed": self.passed, "residuals": dict(self.residuals)}


def check_constraints(params: HjaParams, tol: float = CONSTRAINT_TOL) -> ConstraintReport:
    """Max-abs residual of every normalization identity of the canonical representative."""
    K, N, r = params.n_judges, params.n_items, params.rank
    g, mu, u, v = params.gamma, params.mu, params.u, params.v

    res = {
        "centering_mu": abs(mu.sum()),
        "centering_v": float(np.abs(v.sum(axis=0)).max(initial=0.0)),
        "scaling_gamma": abs(g.sum() - K),
        "scaling_u": float(np.abs(u.sum(axis=0)).max(initial=0.0)),
        "orthogonality": float(np.abs(mu @ v).max(initial=0.0)),
        "anchoring_v": float(np.abs(v.T @ v / N - np.eye(r)).max(initial=0.0)),
    }
    d_mat = u.T @ u / K
    res["anchoring_u_offdiag"] = float(np.abs(d_mat - np.diag(np.diag(d_mat))).max(initial=0.0))
    d = np.diag(d_mat)
    # violation of "strictly decreasing and positive"; ties register as zero
    res["anchoring_order"] = (
        max(0.0, float(np.max(d[1:] - d[:-1], initial=0.0)), float(-d.min())) if r else 0.0
    )
    sign = 0.0
    for m in range(r):
        nz = np.flatnonzero(np.abs(u[:, m]) > SIGN_EPS)
        if len(nz) and u[nz[0], m] < 0:
            sign = max(sign, -u[nz[0], m])
    res["sign"] = sign
    return ConstraintReport({k: float(val) for k, val in res.items()}, tol)


def reanchor(gamma: np.ndarray, mu: np.ndarray, u: np.ndarray, v: np.ndarray,
             delta_mu: float = DELTA_MU, delta_sigma: float = DELTA_SIGMA) -> HjaParams:
    """Map an affine-feasible tuple to the canonical representative of the same score matrix.

    Raises :class:`ReanchorFailed` when ``||mu|| < delta_mu`` or when the
    r-th singular value of the re-projected heterogeneity term is below
    ``delta_sigma``.
    """
    gamma = np.asarray(gamma, dtype=float)
    mu = np.asarray(mu, dtype=float)
    K, N = len(gamma), len(mu)
    u = np.asarray(u, dtype=float).reshape(K, -1)
    v = np.asarray(v, dtype=float).reshape(N, -1)
    r = u.shape[1]

    mu_norm = float(np.linalg.norm(mu))
    if mu_norm < delta_mu:
        raise ReanchorFailed("norm", mu_norm, delta_mu)
    if r == 0:
        return HjaParams(gamma, mu, u, v)

    a = v.T @ mu / mu_norm**2
    v_bar = v - np.outer(mu, a)
    gamma_new = gamma + u @ a
    p, sig, qt = np.linalg.svd(u @ v_bar.T, full_matrices=False)
    if sig[r - 1] < delta_sigma:
        raise ReanchorFailed("spectral", float(sig[r - 1]), delta_sigma)
    u_new = p[:, :r] * sig[:r] / np.sqrt(N)
    v_new = np.sqrt(N) * qt[:r].T
    u_new, v_new = sign_anchor(u_new, v_new)
    return HjaParams(gamma_new, mu, u_new, v_new)


def random_canonical(n_judges: int, n_items: int, rank: int, rng: np.random.Generator,
                     het_scale: float = 1.0) -> HjaParams:
    """Draw a random point of the canonical parameter set (used by tests and studies)."""
    K, N, r = n_judges, n_items, rank
    if r > max_rank(K, N):
        raise RankTooLarge(r, max_rank(K, N))
    mu = rng.standard_normal(N)
    mu -= mu.mean()
    gamma = 1.0 + 0.5 * rng.standard_normal(K)
    gamma += 1.0 - gamma.mean()
    if r == 0:
        return HjaParams(gamma, mu, np.zeros((K, 0)), np.zeros((N, 0)))
    basis_n = np.column_stack([np.ones(N), mu])
    vr = rng.standard_normal((N, r))
    vr -= basis_n @ np.linalg.lstsq(basis_n, vr, rcond=None)[0]
    qv, _ = np.linalg.qr(vr)
    ur = rng.standard_normal((K, r))
    ur -= ur.mean(axis=0)
    qu, _ = np.linalg.qr(ur)
    d = np.sort(rng.uniform(0.2, 1.5, size=r))[::-1] * het_scale
    d += np.arange(r)[::-1] * 0.1 * het_scale
    u = qu * np.sqrt(K * d)
    v = np.sqrt(N) * qv
    u, v = sign_anchor(u, v)
    return HjaParams(gamma, mu, u, v)
