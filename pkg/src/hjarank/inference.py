"""Plug-in Fisher information and delta-method Wald intervals in the identified chart.

The likelihood is parameterized by the ambient vector ``(gamma, mu, U, V)``
but only the directions tangent to the normalization constraints are free.
Intervals use the information restricted to an orthonormal basis of that
tangent space at the fitted point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from . import kernels
from .data import AggregatedCounts, check_connectivity
from .decomposition import HjaParams
from .exceptions import ChartError, SingularInformation, ValidationError
from .likelihood import cell_eta, linear_predictor_gradient, sigmoid
from .solver import FitResult

TARGET_KINDS = ("consensus_contrast", "judge_contrast", "gamma", "pairwise_prob",
                "score_entry", "leverage")
LEVERAGE_SMOOTH_MIN = 1e-8
EIG_RTOL = 1e-10


@dataclass(frozen=True)
class FisherInfo:
    ambient: np.ndarray
    n_total: float


@dataclass(frozen=True)
class TangentBasis:
    basis: np.ndarray
    constraint_jacobian: np.ndarray

    @property
    def d_free(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    indices: tuple[int, ...]

    def __post_init__(self):
        arity = {"consensus_contrast": 2, "judge_contrast": 3, "gamma": 1, "pairwise_prob": 3,
                 "score_entry": 2, "leverage": 1}
        if self.kind not in arity:
            raise ValidationError(f"unknown target kind {self.kind!r}")
        if len(self.indices) != arity[self.kind]:
            raise ValidationError(f"{self.kind} takes {arity[self.kind]} indices")
        object.__setattr__(self, "indices", tuple(int(x) for x in self.indices))

    def label(self, id_map=None) -> str:
        if id_map is None:
            return f"{self.kind}({','.join(map(str, self.indices))})"
        names = []
        for pos, idx in enumerate(self.indices):
            judge_slot = self.kind in ("judge_contrast", "pairwise_prob", "score_entry") and pos == 0
            judge_slot = judge_slot or self.kind in ("gamma", "leverage")
            names.append(id_map.judges[idx] if judge_slot else id_map.items[idx])
        return f"{self.kind}({','.join(names)})"


@dataclass(frozen=True)
class Interval:
    estimate: float
    se: float
    lower: float
    upper: float
    level: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "se": self.se, "lower": self.lower,
                "upper": self.upper, "level": self.level}


def fisher_info(params: HjaParams, counts: AggregatedCounts) -> FisherInfo:
    """Sum over observed cells of ``(n_kij / n) p (1 - p) g g^T``."""
    p = sigmoid(cell_eta(params, counts))
    w = counts.n / counts.n_total * p * (1.0 - p)
    amb = kernels.fisher(w, params.gamma, params.mu, params.u, params.v,
                         counts.k, counts.i, counts.j)
    return FisherInfo(0.5 * (amb + amb.T), counts.n_total)


def constraint_jacobian(params: HjaParams, fixed_gamma: bool = False) -> np.ndarray:
    """Gradients (rows) of the normalization equalities at ``params``.

    With ``fixed_gamma`` every gamma entry is held fixed, which gives the
    chart of the pooled model ``S = 1 mu^T``.
    """
    K, N, r = params.n_judges, params.n_items, params.rank
    d = params.dim
    og, om, ou, ov = 0, K, K + N, K + N + K * r
    rows = []

    def row():
        x = np.zeros(d)
        rows.append(x)
        return x

    row()[om:om + N] = 1.0
    if fixed_gamma:
        for k in range(K):
            row()[og + k] = 1.0
    else:
        row()[og:og + K] = 1.0
    u, v, mu = params.u, params.v, params.mu
    for m in range(r):
        row()[ov + m:ov + N * r:r] = 1.0              # V^T 1
        row()[ou + m:ou + K * r:r] = 1.0              # 1^T U
        x = row()                                      # mu^T V
        x[om:om + N] = v[:, m]
        x[ov + m:ov + N * r:r] = mu
    for a in range(r):
        for b in range(a, r):                          # V^T V = N I
            x = row()
            x[ov + a:ov + N * r:r] += v[:, b]
            x[ov + b:ov + N * r:r] += v[:, a]
    for a in range(r):
        for b in range(a + 1, r):                      # off-diagonal of U^T U
            x = row()
            x[ou + a:ou + K * r:r] += u[:, b]
            x[ou + b:ou + K * r:r] += u[:, a]
    return np.array(rows).reshape(-1, d)


def expected_free_dim(n_judges: int, n_items: int, rank: int) -> int:
    K, N, r = n_judges, n_items, rank
    return (K - 1) + (N - 1) + r * (K + N - r - 3)


def tangent_basis(params: HjaParams, fixed_gamma: bool = False) -> TangentBasis:
    """Orthonormal basis of the null space of the constraint Jacobian."""
    c = constraint_jacobian(params, fixed_gamma=fixed_gamma)
    _, s, vt = np.linalg.svd(c, full_matrices=True)
    n_rows = c.shape[0]
    rank = int(np.sum(s > 1e-10 * max(1.0, s.max(initial=0.0))))
    if rank < n_rows:
        raise ChartError(f"constraint Jacobian has rank {rank} < {n_rows}: the anchoring is degenerate "
                         "(e.g. tied diagonal entries of U^T U / K)")
    return TangentBasis(vt[rank:].T.copy(), c)


def target_value_and_gradient(params: HjaParams, target: TargetSpec) -> tuple[float, np.ndarray]:
    K, N, r = params.n_judges, params.n_items, params.rank
    g, mu, u, v = params.gamma, params.mu, params.u, params.v
    og, om, ou, ov = 0, K, K + N, K + N + K * r
    a = np.zeros(params.dim)
    idx = target.indices
    bounds = {"consensus_contrast": (N, N), "judge_contrast": (K, N, N), "gamma": (K,),
              "pairwise_prob": (K, N, N), "score_entry": (K, N), "leverage": (K,)}[target.kind]
    if any(not 0 <= x < b for x, b in zip(idx, bounds)):
        raise IndexError(f"target {target.label()} out of range")

    if target.kind == "consensus_contrast":
        i, j = idx
        a[om + i] += 1.0
        a[om + j] -= 1.0
        return float(mu[i] - mu[j]), a
    if target.kind == "gamma":
        a[og + idx[0]] = 1.0
        return float(g[idx[0]]), a
    if target.kind in ("judge_contrast", "pairwise_prob"):
        k, i, j = idx
        if i == j:
            return (0.0 if target.kind == "judge_contrast" else 0.5), a
        pos, val = linear_predictor_gradient(params, k, i, j)
        eta = float(g[k] * (mu[i] - mu[j]) + u[k] @ (v[i] - v[j]))
        a[pos] = val
        if target.kind == "judge_contrast":
            return eta, a
        p = float(sigmoid(eta))
        return p, p * (1.0 - p) * a
    if target.kind == "score_entry":
        k, i = idx
        a[og + k] = mu[i]
        a[om + i] = g[k]
        a[ou + k * r:ou + (k + 1) * r] = v[i]
        a[ov + i * r:ov + (i + 1) * r] = u[k]
        return float(g[k] * mu[i] + u[k] @ v[i]), a
    # leverage
    k = idx[0]
    row = v @ u[k]
    h = float(np.linalg.norm(row))
    if h <= LEVERAGE_SMOOTH_MIN:
        raise ValidationError(f"leverage of judge {k} is {h:.3g}: the norm is not smooth there")
    a[ou + k * r:ou + (k + 1) * r] = v.T @ row / h
    a[ov:ov + N * r] = (np.outer(row, u[k]) / h).ravel()
    return h, a


class WaldInference:
    """Fisher information restricted to the tangent chart, factorized once.

    ``fixed_gamma=True`` gives the pooled-model chart (gamma held at its value).
    """

    def __init__(self, params: HjaParams, counts: AggregatedCounts, fixed_gamma: bool = False):
        self.params = params
        self.counts = counts
        self.info = fisher_info(params, counts)
        self.basis = tangent_basis(params, fixed_gamma=fixed_gamma)
        b = self.basis.basis
        m = b.T @ self.info.ambient @ b
        self.chart_information = 0.5 * (m + m.T)
        eig = np.linalg.eigvalsh(self.chart_information) if m.size else np.zeros(0)
        if m.size and (eig[-1] <= 0 or eig[0] < EIG_RTOL * eig[-1]):
            raise SingularInformation(
                f"information in the identified chart is singular (min eig {eig[0]:.3g}, "
                f"max eig {eig[-1]:.3g}); check that every judge's comparison graph is connected",
                graph_report=check_connectivity(counts))
        self.min_eigenvalue = float(eig[0]) if m.size else 0.0
        self._factor = cho_factor(self.chart_information) if m.size else None

    @cached_property
    def covariance(self) -> np.ndarray:
        """Ambient covariance ``B (B^T I B)^{-1} B^T / n``."""
        b = self.basis.basis
        return b @ cho_solve(self._factor, b.T) / self.info.n_total

    def se(self, gradient: np.ndarray) -> float:
        ba = self.basis.basis.T @ gradient
        if not np.any(ba):
            return 0.0
        return float(np.sqrt(max(ba @ cho_solve(self._factor, ba), 0.0) / self.info.n_total))

    def interval(self, target: TargetSpec, level: float = 0.95) -> Interval:
        if not 0.0 < level < 1.0:
            raise ValidationError("confidence level must lie in (0, 1)")
        q, a = target_value_and_gradient(self.params, target)
        se = self.se(a)
        z = float(norm.ppf(0.5 + level / 2.0))
        return Interval(q, se, q - z * se, q + z * se, level)

    def score_intervals(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper bound matrices for every score entry ``S_ki``."""
        K, N = self.params.n_judges, self.params.n_items
        lo, hi = np.empty((K, N)), np.empty((K, N))
        for k in range(K):
            for i in range(N):
                iv = self.interval(TargetSpec("score_entry", (k, i)), level)
                lo[k, i], hi[k, i] = iv.lower, iv.upper
        return lo, hi


def target_ci(fit: FitResult | HjaParams, info: FisherInfo, basis: TangentBasis,
              target: TargetSpec, level: float = 0.95) -> Interval:
    """Wald interval ``q +- z se`` with ``se^2 = a^T B (B^T I B)^{-1} B^T a / n``."""
    params = fit.params if isinstance(fit, FitResult) else fit
    if not 0.0 < level < 1.0:
        raise ValidationError("confidence level must lie in (0, 1)")
    b = basis.basis
    m = b.T @ info.ambient @ b
    m = 0.5 * (m + m.T)
    eig = np.linalg.eigvalsh(m)
    if eig[-1] <= 0 or eig[0] < EIG_RTOL * eig[-1]:
        raise SingularInformation(f"information in the identified chart is singular "
                                  f"(min eig {eig[0]:.3g}, max eig {eig[-1]:.3g})")
    q, a = target_value_and_gradient(params, target)
    ba = b.T @ a
    se = float(np.sqrt(max(ba @ cho_solve(cho_factor(m), ba), 0.0) / info.n_total))
    z = float(norm.ppf(0.5 + level / 2.0))
    return Interval(q, se, q - z * se, q + z * se, level)


@dataclass(frozen=True)
class LeverageReport:
    h: np.ndarray
    rho: np.ndarray

    @property
    def flagged(self) -> int:
        """Index of the judge with the largest relative leverage."""
        return int(np.argmax(self.rho))

    def rows(self, id_map=None) -> list[dict]:
        return [{"judge": id_map.judges[k] if id_map else k, "h": float(h), "rho": float(rho),
                 "flagged": k == self.flagged}
                for k, (h, rho) in enumerate(zip(self.h, self.rho))]


def leverage_diagnostics(params: HjaParams, eps: float = 1e-8) -> LeverageReport:
    """Row norms of ``U V^T`` and their size relative to the consensus part of each row."""
    h = np.linalg.norm(params.u @ params.v.T, axis=1)
    rho = h / (np.abs(params.gamma) * np.linalg.norm(params.mu) + eps)
    return LeverageReport(h, rho)
