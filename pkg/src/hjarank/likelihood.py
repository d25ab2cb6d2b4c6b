"""Binomial BTL likelihood of the aggregated counts and its exact gradient."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import kernels
from .data import AggregatedCounts
from .decomposition import HjaParams
from .exceptions import ValidationError


class Gradient(NamedTuple):
    gamma: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.mu, self.u.ravel(), self.v.ravel()])


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _check_triple(params: HjaParams, k: int, i: int, j: int) -> None:
    if not (0 <= k < params.n_judges and 0 <= i < params.n_items and 0 <= j < params.n_items):
        raise IndexError(f"triple ({k}, {i}, {j}) out of range for K={params.n_judges}, N={params.n_items}")


def linear_predictor(params: HjaParams, k: int, i: int, j: int) -> float:
    _check_triple(params, k, i, j)
    return float(params.gamma[k] * (params.mu[i] - params.mu[j])
                 + params.u[k] @ (params.v[i] - params.v[j]))


def predict_prob(params: HjaParams, triple: tuple[int, int, int]) -> float:
    """Probability that judge ``k`` prefers item ``i`` over item ``j``."""
    return float(sigmoid(linear_predictor(params, *triple)))


def linear_predictor_gradient(params: HjaParams, k: int, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Structurally nonzero entries of the ambient gradient of one cell's linear predictor.

    Returns ``(positions, values)`` into the flattened parameter vector; there
    are ``3 + 3r`` entries.
    """
    _check_triple(params, k, i, j)
    K, N, r = params.n_judges, params.n_items, params.rank
    g, mu, u, v = params.gamma, params.mu, params.u, params.v
    m = np.arange(r)
    pos = np.concatenate([[k, K + i, K + j], K + N + k * r + m,
                          K + N + K * r + i * r + m, K + N + K * r + j * r + m])
    val = np.concatenate([[mu[i] - mu[j], g[k], -g[k]], v[i] - v[j], u[k], -u[k]])
    return pos.astype(np.intp), val


def cell_eta(params: HjaParams, counts: AggregatedCounts) -> np.ndarray:
    _check_dims(params, counts)
    return kernels.linear_predictor(params.gamma, params.mu, params.u, params.v,
                                    counts.k, counts.i, counts.j)


def _check_dims(params: HjaParams, counts: AggregatedCounts) -> None:
    if params.n_judges != counts.n_judges or params.n_items != counts.n_items:
        raise ValidationError(
            f"parameters are {params.n_judges}x{params.n_items} but counts are "
            f"{counts.n_judges}x{counts.n_items}")


def nll(params: HjaParams, counts: AggregatedCounts) -> float:
    """Negative log-likelihood with constants dropped, summed in sorted cell order."""
    return kernels.nll_value(cell_eta(params, counts), counts.n, counts.ybar)


def nll_and_gradient(params: HjaParams, counts: AggregatedCounts) -> tuple[float, Gradient]:
    eta = cell_eta(params, counts)
    value, resid, _ = kernels.logistic_terms(eta, counts.n, counts.ybar)
    grads = kernels.scatter_gradient(resid, params.gamma, params.mu, params.u, params.v,
                                     counts.k, counts.i, counts.j)
    return value, Gradient(*grads)


def nll_gradient(params: HjaParams, counts: AggregatedCounts) -> Gradient:
    return nll_and_gradient(params, counts)[1]
