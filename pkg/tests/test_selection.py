import warnings

import numpy as np
import pytest

from hjarank.data import AggregatedCounts, ComparisonRecord, IdMap, aggregate
from hjarank.decomposition import HjaParams
from hjarank.exceptions import RankTooLarge, SelectionError, ValidationError
from hjarank.likelihood import nll
from hjarank.selection import _argmin_rank, bic, effective_dof, select_rank, spectral_scree
from hjarank.simulation import TruthSpec, all_cells, allocate_comparisons, default_id_map, generate_truth, sample_outcomes
from hjarank.solver import SolverConfig, fit

from conftest import simulated_counts


def test_effective_dof_examples():
    assert effective_dof(4, 8, 0) == 0
    assert effective_dof(4, 8, 1) == 8
    assert effective_dof(20, 6, 2) == 42


def test_effective_dof_concave_nonnegative():
    K, N = 6, 9
    d = np.array([effective_dof(K, N, r) for r in range(min(K - 1, N - 2) + 1)])
    assert np.all(d >= 0)
    assert np.all(np.diff(d, 2) <= 0)


def test_bic_value(sim3000):
    _, c = sim3000
    res0 = fit(c, SolverConfig(rank=0))
    assert bic(res0, c) == pytest.approx(2 * nll(res0.params, c))
    res1 = fit(c, SolverConfig(rank=1))
    assert bic(res1, c) == pytest.approx(2 * nll(res1.params, c) + 8 * np.log(c.n_total))


def test_ties_prefer_smaller_rank():
    assert _argmin_rank({0: 5.0, 1: 3.0, 2: 3.0}) == 1
    # a common shift in the likelihood leaves the choice unchanged
    scores = {0: 10.0, 1: 7.0, 2: 8.5}
    assert _argmin_rank({r: s + 123.4 for r, s in scores.items()}) == _argmin_rank(scores)


def test_bic_selects_true_rank_one():
    _, c = simulated_counts(n_cmp=5000, seed=31)
    sel = select_rank(c, "bic")
    assert sel.chosen_rank == 1
    assert sorted(sel.per_rank_scores) == [0, 1, 2, 3]


def test_cv_scores_and_rank_bound():
    _, c = simulated_counts(n_cmp=1500, seed=32)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sel = select_rank(c, "cv", r_max=2, folds=3, seed=1)
    assert sel.method == "cv" and len(sel.per_rank_scores) == 3
    assert sel.chosen_rank in (0, 1, 2)
    with pytest.raises(RankTooLarge):
        select_rank(c, "bic", r_max=4)
    with pytest.raises(ValidationError):
        select_rank(c, "cv", folds=1)
    with pytest.raises(ValidationError):
        select_rank(c, "aic")


def test_cv_all_folds_skipped():
    # a chain design: removing any record disconnects a judge graph
    recs = [ComparisonRecord("k", "a", "b", 1.0), ComparisonRecord("k", "b", "c", 0.0),
            ComparisonRecord("m", "a", "b", 0.0), ComparisonRecord("m", "b", "c", 1.0)]
    with pytest.warns(UserWarning), pytest.raises(SelectionError):
        select_rank(recs, "cv", r_max=0, folds=4)


def test_scree_sorted_and_dominant():
    _, c = simulated_counts(h=3.0, n_cmp=20000, seed=33)
    for ref in ("fit", "projection"):
        sv = spectral_scree(c, reference=ref)
        assert np.all(np.diff(sv) <= 0)
        assert sv[0] == sv.max()
    sv = spectral_scree(c, reference="projection")
    assert sv[0] / sv[1] > 5


def test_scree_projection_dominance_across_seeds():
    for seed in range(5):
        _, c = simulated_counts(h=1.0, n_cmp=20000, seed=200 + seed)
        sv = spectral_scree(c, reference="projection")
        assert sv[0] / sv[1] > 5


def test_scree_vanishes_without_noise_or_heterogeneity():
    rng = np.random.default_rng(0)
    mu = rng.standard_normal(6)
    mu -= mu.mean()
    s = np.outer(np.ones(3), mu)
    k, i, j = all_cells(3, 6)
    n = np.full(len(k), 50.0)
    p = 1 / (1 + np.exp(-(s[k, i] - s[k, j])))
    c = AggregatedCounts(default_id_map(3, 6), k, i, j, n, n * p)
    assert np.abs(spectral_scree(c, SolverConfig(tol=1e-14))).max() < 1e-5
    assert np.abs(spectral_scree(c, reference="projection")).max() < 1e-5
    with pytest.raises(ValidationError):
        spectral_scree(c, reference="svd")


@pytest.mark.slow
def test_bic_selects_zero_for_consensus_data():
    hits = 0
    for seed in range(50):
        _, c = simulated_counts(rank=0, n_cmp=5000, seed=1000 + seed)
        hits += select_rank(c, "bic").chosen_rank == 0
    assert hits >= 45
