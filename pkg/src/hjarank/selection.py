"""Choosing the heterogeneity rank: BIC, k-fold validation likelihood, and a spectral scree."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import AggregatedCounts, ComparisonRecord, aggregate, check_connectivity, kfold_records
from .decomposition import decompose, max_rank
from .exceptions import HjaError, RankTooLarge, SelectionError, ValidationError
from .likelihood import nll
from .solver import FitResult, SolverConfig, fit, judgewise_score_matrix


def effective_dof(n_judges: int, n_items: int, rank: int) -> int:
    """Free heterogeneity parameters ``r (K + N - r - 3)`` after the identification constraints."""
    return rank * (n_judges + n_items - rank - 3)


def bic(fit_result: FitResult, counts: AggregatedCounts) -> float:
    """``2 L_n + d_r log n`` with ``L_n`` the unnormalized negative log-likelihood."""
    r = fit_result.params.rank
    return 2.0 * nll(fit_result.params, counts) + \
        effective_dof(counts.n_judges, counts.n_items, r) * math.log(counts.n_total)


@dataclass(frozen=True)
class RankSelection:
    chosen_rank: int
    per_rank_scores: dict
    method: str
    skipped_folds: int = 0

    def to_dict(self) -> dict:
        return {"chosen_rank": self.chosen_rank, "method": self.method,
                "per_rank_scores": {str(r): s for r, s in self.per_rank_scores.items()},
                "skipped_folds": self.skipped_folds}


def _argmin_rank(scores: dict) -> int:
    # ties go to the smaller rank
    best = min(scores.values())
    return min(r for r, s in scores.items() if s == best)


def _fold_usable(counts: AggregatedCounts, allow_disconnected: bool) -> bool:
    report = check_connectivity(counts)
    return report.pooled_connected and (allow_disconnected or report.all_connected)


def select_rank(data: Sequence[ComparisonRecord] | AggregatedCounts, method: str = "bic",
                r_max: int | None = None, folds: int = 5, seed: int = 0,
                config: SolverConfig = SolverConfig()) -> RankSelection:
    """Pick the heterogeneity rank by BIC on the full data or by k-fold held-out likelihood.

    Cross-validation splits at the record level; aggregated counts are first
    expanded back into records. Held-out NLL is averaged over folds.
    """
    if isinstance(data, AggregatedCounts):
        counts = data
        records = None
    else:
        records = list(data)
        counts = aggregate(records)
    limit = max_rank(counts.n_judges, counts.n_items)
    r_max = limit if r_max is None else r_max
    if r_max > limit:
        raise RankTooLarge(r_max, limit)
    if r_max < 0:
        raise ValidationError("r_max must be nonnegative")

    if method == "bic":
        scores = {}
        for r in range(r_max + 1):
            scores[r] = bic(fit(counts, replace(config, rank=r)), counts)
        return RankSelection(_argmin_rank(scores), scores, "bic")

    if method != "cv":
        raise ValidationError(f"unknown selection method {method!r}")
    if folds < 2:
        raise ValidationError("cross-validation needs at least two folds")
    if records is None:
        records = counts.to_records()
    id_map = counts.id_map
    parts = kfold_records(records, folds, seed)
    per_rank: dict[int, list[float]] = {r: [] for r in range(r_max + 1)}
    skipped = 0
    for f, test_idx in enumerate(parts):
        mask = np.ones(len(records), dtype=bool)
        mask[test_idx] = False
        train = [rec for rec, keep in zip(records, mask) if keep]
        test = [records[t] for t in test_idx]
        if not train or not test:
            skipped += 1
            continue
        train_counts = aggregate(train, id_map)
        if not _fold_usable(train_counts, config.allow_disconnected):
            warnings.warn(f"fold {f} skipped: its training comparison graph is disconnected",
                          stacklevel=2)
            skipped += 1
            continue
        test_counts = aggregate(test, id_map)
        fold_scores = {}
        try:
            for r in range(r_max + 1):
                res = fit(train_counts, replace(config, rank=r))
                fold_scores[r] = nll(res.params, test_counts)
        except HjaError as exc:
            warnings.warn(f"fold {f} skipped: {exc}", stacklevel=2)
            skipped += 1
            continue
        for r, s in fold_scores.items():
            per_rank[r].append(s)
    if skipped == len(parts):
        raise SelectionError("every cross-validation fold was skipped")
    scores = {r: float(np.mean(v)) for r, v in per_rank.items()}
    return RankSelection(_argmin_rank(scores), scores, "cv", skipped)


def spectral_scree(counts: AggregatedCounts, config: SolverConfig = SolverConfig(),
                   ridge: float = 0.0, reference: str = "fit") -> np.ndarray:
    """Singular values (descending) of judgewise BTL scores minus a consensus-only part.

    ``reference="fit"`` subtracts the rank-0 maximum-likelihood fit;
    ``"projection"`` subtracts ``gamma mu^T`` computed from the judgewise
    matrix itself (column-mean consensus), so the residual is exactly its
    heterogeneity part. The likelihood fit can absorb some heterogeneity and
    then shows a slower decay.
    """
    s_hat = judgewise_score_matrix(counts, ridge=ridge)
    if reference == "fit":
        s0 = fit(counts, replace(config, rank=0)).params
    elif reference == "projection":
        s0 = decompose(s_hat, rank=0)
    else:
        raise ValidationError(f"unknown scree reference {reference!r}")
    resid = s_hat - np.outer(s0.gamma, s0.mu)
    return np.linalg.svd(resid, compute_uv=False)
