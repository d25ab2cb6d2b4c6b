import numpy as np
import pytest
from scipy.stats import norm

from hjarank.data import AggregatedCounts, IdMap
from hjarank.decomposition import HjaParams, random_canonical
from hjarank.exceptions import ChartError, SingularInformation, ValidationError
from hjarank.inference import (TargetSpec, WaldInference, constraint_jacobian, expected_free_dim,
                               fisher_info, leverage_diagnostics, tangent_basis,
                               target_value_and_gradient, target_ci)
from hjarank.solver import SolverConfig, fit

from conftest import simulated_counts
from oracles import central_difference, dense_fisher


@pytest.fixture(scope="module")
def fitted():
    truth, c = simulated_counts(seed=21)
    return truth, c, fit(c, SolverConfig(rank=1))


def test_fisher_matches_dense_assembly():
    truth, c = simulated_counts(n_items=3, n_judges=2, rank=1, n_cmp=60, seed=2)
    p = random_canonical(2, 3, 1, np.random.default_rng(0))
    info = fisher_info(p, c)
    oracle = dense_fisher(p.gamma, p.mu, p.u, p.v, c.k, c.i, c.j, c.n)
    assert np.allclose(info.ambient, oracle, atol=1e-12)
    assert np.allclose(info.ambient, info.ambient.T)
    assert np.linalg.eigvalsh(info.ambient).min() >= -1e-12


def test_single_cell_fisher_is_rank_one():
    c = AggregatedCounts(IdMap(("k",), ("a", "b", "c")), [0], [0], [2], [5.0], [2.0])
    p = HjaParams([1.0], [0.5, 0.0, -0.5], np.zeros((1, 0)), np.zeros((3, 0)))
    assert np.linalg.matrix_rank(fisher_info(p, c).ambient) == 1


@pytest.mark.parametrize("K,N,r", [(4, 8, 1), (4, 8, 0), (5, 7, 2), (3, 9, 2)])
def test_tangent_dimension_and_null_space(K, N, r):
    p = random_canonical(K, N, r, np.random.default_rng(K * 10 + r))
    b = tangent_basis(p)
    assert b.d_free == expected_free_dim(K, N, r)
    assert np.allclose(b.basis.T @ b.basis, np.eye(b.d_free), atol=1e-12)
    assert np.abs(b.constraint_jacobian @ b.basis).max() < 1e-10


def test_tangent_dimension_standard_case():
    assert expected_free_dim(4, 8, 1) == 18
    assert expected_free_dim(4, 8, 0) == 3 + 7


def test_constraint_jacobian_matches_finite_differences():
    K, N, r = 3, 6, 2
    p = random_canonical(K, N, r, np.random.default_rng(5))

    def constraints(x):
        q = HjaParams.unflatten(x, K, N, r)
        vals = [q.mu.sum(), q.gamma.sum()]
        for m in range(r):
            vals += [q.v[:, m].sum(), q.u[:, m].sum(), q.mu @ q.v[:, m]]
        for a in range(r):
            for b_ in range(a, r):
                vals.append(q.v[:, a] @ q.v[:, b_])
        for a in range(r):
            for b_ in range(a + 1, r):
                vals.append(q.u[:, a] @ q.u[:, b_])
        return np.array(vals)

    x0 = p.flatten()
    fd = np.array([central_difference(lambda x, t=t: constraints(x)[t], x0, 1e-6)
                   for t in range(len(constraints(x0)))])
    assert np.allclose(constraint_jacobian(p), fd, atol=1e-7)


def test_tied_anchoring_raises_chart_error():
    K, N = 4, 6
    g = np.random.default_rng(0)
    p = random_canonical(K, N, 2, g)
    # with U = 0 the off-diagonal row of U^T U has a zero gradient
    with pytest.raises(ChartError):
        tangent_basis(HjaParams(p.gamma, p.mu, np.zeros((K, 2)), p.v))


def test_tied_heterogeneity_strengths_are_unidentified():
    # equal diagonal entries of U^T U / K leave a rotation that keeps S and all constraints
    from hjarank.simulation import allocate_comparisons, sample_outcomes
    p = random_canonical(4, 8, 2, np.random.default_rng(0))
    u = p.u / np.linalg.norm(p.u, axis=0) * np.linalg.norm(p.u[:, 0])
    tied = HjaParams(p.gamma, p.mu, u, p.v)
    assert tangent_basis(tied).d_free == expected_free_dim(4, 8, 2)
    c = sample_outcomes(tied, allocate_comparisons(5000, 4, 8, 1), 1)
    with pytest.raises(SingularInformation):
        WaldInference(tied, c)


def test_zero_contrast_has_zero_width(fitted):
    _, c, res = fitted
    w = WaldInference(res.params, c)
    iv = w.interval(TargetSpec("consensus_contrast", (2, 2)))
    assert iv.estimate == 0.0 and iv.se == 0.0 and iv.lower == iv.upper == 0.0


def test_interval_formula(fitted):
    _, c, res = fitted
    w = WaldInference(res.params, c)
    iv = w.interval(TargetSpec("gamma", (1,)), level=0.9)
    z = norm.ppf(0.95)
    assert iv.lower == pytest.approx(iv.estimate - z * iv.se)
    assert iv.upper == pytest.approx(iv.estimate + z * iv.se)
    via_func = target_ci(res, w.info, w.basis, TargetSpec("gamma", (1,)), 0.9)
    assert via_func.se == pytest.approx(iv.se, rel=1e-10)


def test_probability_se_follows_chain_rule(fitted):
    _, c, res = fitted
    p = res.params
    w = WaldInference(p, c)
    for k, i, j in [(0, 1, 2), (3, 0, 7)]:
        prob = w.interval(TargetSpec("pairwise_prob", (k, i, j)))
        eta = w.interval(TargetSpec("judge_contrast", (k, i, j)))
        pr = 1 / (1 + np.exp(-eta.estimate))
        assert prob.se == pytest.approx(pr * (1 - pr) * eta.se, rel=1e-10)


def test_probability_se_at_zero_predictor():
    # a fitted point with eta = 0 for one judge pair: items 0 and 1 tied for every judge
    K, N = 3, 5
    g = np.random.default_rng(3)
    mu = np.array([0.5, 0.5, -0.2, 0.1, -0.9])
    v = g.standard_normal((N, 1))
    v[1] = v[0]
    v -= v.mean()
    v -= np.outer(mu, mu @ v) / (mu @ mu)
    v *= np.sqrt(N) / np.linalg.norm(v)
    p = HjaParams([1.2, 0.8, 1.0], mu, [[0.5], [-0.6], [0.1]], v)
    _, c = simulated_counts(n_items=N, n_judges=K, rank=1, n_cmp=900, seed=1)
    w = WaldInference(p, c)
    prob = w.interval(TargetSpec("pairwise_prob", (0, 0, 1)))
    eta = w.interval(TargetSpec("judge_contrast", (0, 0, 1)))
    assert eta.estimate == pytest.approx(0.0, abs=1e-12)
    assert prob.estimate == pytest.approx(0.5)
    assert prob.se == pytest.approx(0.25 * eta.se, rel=1e-10)


def test_target_gradients_match_finite_differences(fitted):
    _, _, res = fitted
    p = res.params
    K, N, r = p.n_judges, p.n_items, p.rank
    for t in [TargetSpec("consensus_contrast", (0, 3)), TargetSpec("judge_contrast", (2, 1, 5)),
              TargetSpec("gamma", (3,)), TargetSpec("pairwise_prob", (1, 0, 6)),
              TargetSpec("score_entry", (2, 4)), TargetSpec("leverage", (1,))]:
        _, a = target_value_and_gradient(p, t)
        f = lambda x: target_value_and_gradient(HjaParams.unflatten(x, K, N, r), t)[0]
        assert np.allclose(a, central_difference(f, p.flatten(), 1e-6), atol=1e-6), t.kind


def test_leverage_target_requires_smoothness():
    p = HjaParams([1.0, 1.0], [1.0, -1.0, 0.0], [[0.0], [0.0]], [[1.0], [1.0], [-2.0]])
    with pytest.raises(ValidationError):
        target_value_and_gradient(p, TargetSpec("leverage", (0,)))


def test_se_scales_with_sample_size(fitted):
    _, c, res = fitted
    a = WaldInference(res.params, c)
    b = WaldInference(res.params, c.scaled(2.0))
    t = TargetSpec("consensus_contrast", (0, 5))
    assert b.interval(t).se == pytest.approx(a.interval(t).se / np.sqrt(2), rel=1e-10)


def test_removing_a_judge_makes_information_singular(fitted):
    _, c, res = fitted
    keep = c.k != 2
    dropped = AggregatedCounts(c.id_map, c.k[keep], c.i[keep], c.j[keep], c.n[keep], c.y[keep])
    with pytest.raises(SingularInformation) as err:
        WaldInference(res.params, dropped)
    assert err.value.graph_report is not None
    assert err.value.graph_report.per_judge_connected[2] is False


def test_pooled_chart_dimension():
    p = HjaParams(np.ones(3), [1.0, 0.0, -1.0, 0.5, -0.5], np.zeros((3, 0)), np.zeros((5, 0)))
    assert tangent_basis(p, fixed_gamma=True).d_free == 4


def test_leverage_diagnostics_values():
    N = 4
    v = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    p = HjaParams([1.0, 1.0], [1.0, -1.0, 0.5, -0.5], [[2.0], [-2.0]], v)
    rep = leverage_diagnostics(p)
    assert rep.h == pytest.approx([2 * np.sqrt(N)] * 2)
    zero = leverage_diagnostics(HjaParams([1.0, 1.0], p.mu, [[0.0], [0.0]], v))
    assert np.all(zero.h == 0) and np.all(zero.rho == 0)
    rows = leverage_diagnostics(HjaParams([1.0, 1.0], p.mu, [[2.0], [-1.0]], v)).rows()
    assert [r["flagged"] for r in rows] == [True, False]


def test_invalid_target_arity():
    with pytest.raises(ValidationError):
        TargetSpec("gamma", (0, 1))
    with pytest.raises(ValidationError):
        TargetSpec("mystery", (0,))
