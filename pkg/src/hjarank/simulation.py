"""Synthetic ground truth, comparison designs, outcome sampling, and recovery metrics."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np
from scipy.stats import spearmanr

from .data import AggregatedCounts, IdMap
from .decomposition import HjaParams, compose, max_rank, reanchor, sign_anchor
from .exceptions import HjaError, RankTooLarge, ValidationError
from .inference import WaldInference
from .likelihood import sigmoid
from .solver import SolverConfig, fit, fit_baseline

log = logging.getLogger(__name__)

METHODS = ("hja", "ja", "btl", "btl_svd")
METRICS = ("mse", "spearman", "ndcg", "coverage", "sign_acc")


@dataclass(frozen=True)
class TruthSpec:
    n_items: int = 8
    n_judges: int = 4
    rank: int = 1
    het_scale: float = 1.0
    seed: int = 0


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng([int(x) for x in keys])


def generate_truth(spec: TruthSpec, rng: np.random.Generator | None = None) -> HjaParams:
    """Draw a ground-truth parameter tuple.

    Consensus scores are centered standard normals and sensitivities are ``K``
    times a flat Dirichlet draw. Heterogeneity factors are orthonormalized in
    the constrained column spaces, given strengths ``r, ..., 1`` and scaled by
    ``sqrt(het_scale)`` on both sides. For ``het_scale > 0`` the result is
    returned as the canonical representative of its score matrix.
    """
    K, N, r, h = spec.n_judges, spec.n_items, spec.rank, spec.het_scale
    if r > max_rank(K, N):
        raise RankTooLarge(r, max_rank(K, N))
    if h < 0:
        raise ValidationError("het_scale must be nonnegative")
    rng = rng if rng is not None else _rng(spec.seed)

    mu = rng.standard_normal(N)
    mu -= mu.mean()
    expo = rng.standard_exponential(K)
    gamma = K * expo / expo.sum()
    if r == 0:
        return HjaParams(gamma, mu, np.zeros((K, 0)), np.zeros((N, 0)))

    eps = 1e-12
    v_raw = rng.standard_normal((N, r))
    u_raw = rng.standard_normal((K, r))
    v_raw -= v_raw.mean(axis=0)
    v_raw -= np.outer(mu, mu @ v_raw) / max(mu @ mu, eps)
    q_v, _ = np.linalg.qr(v_raw)
    u_raw -= u_raw.mean(axis=0)
    q_u, _ = np.linalg.qr(u_raw)

    strengths = np.arange(r, 0, -1, dtype=float)
    v = q_v * (np.sqrt(N) * strengths)
    u = q_u * (np.sqrt(K) * strengths)
    v -= v.mean(axis=0)
    v -= np.outer(mu, mu @ v) / max(mu @ mu, eps)
    u, v = sign_anchor(u, v)
    u, v = u * np.sqrt(h), v * np.sqrt(h)
    if h == 0:
        return HjaParams(gamma, mu, np.zeros((K, r)), np.zeros((N, r)))
    return reanchor(gamma, mu, u, v)


@dataclass(frozen=True)
class Design:
    """Comparison counts for every cell ``(k, i, j)``, ``i < j``; zero-count cells included."""

    k: np.ndarray
    i: np.ndarray
    j: np.ndarray
    n: np.ndarray

    def as_dict(self) -> dict[tuple[int, int, int], int]:
        return {(int(a), int(b), int(c)): int(m) for a, b, c, m in zip(self.k, self.i, self.j, self.n)}

    @property
    def total(self) -> int:
        return int(self.n.sum())


def all_cells(n_judges: int, n_items: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(n_items, k=1)
    k = np.repeat(np.arange(n_judges), len(iu))
    return k, np.tile(iu, n_judges), np.tile(ju, n_judges)


def allocate_comparisons(n_cmp: int, n_judges: int, n_items: int,
                         seed: int | np.random.Generator = 0) -> Design:
    """Near-balanced allocation of ``n_cmp`` comparisons over all judge-item-pair cells."""
    if n_cmp < 1:
        raise ValidationError("n_cmp must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else _rng(seed)
    k, i, j = all_cells(n_judges, n_items)
    cells = len(k)
    base, extra = divmod(n_cmp, cells)
    n = np.full(cells, base, dtype=np.int64)
    n[rng.choice(cells, size=extra, replace=False)] += 1
    return Design(k, i, j, n)


def default_id_map(n_judges: int, n_items: int) -> IdMap:
    return IdMap(tuple(f"judge{k}" for k in range(n_judges)), tuple(f"item{i}" for i in range(n_items)))


def sample_outcomes(truth: HjaParams, design: Design, seed: int | np.random.Generator = 0,
                    id_map: IdMap | None = None) -> AggregatedCounts:
    """Binomial win counts with success probability ``sigmoid(S_ki - S_kj)`` per cell."""
    rng = seed if isinstance(seed, np.random.Generator) else _rng(seed)
    keep = design.n > 0
    if not np.any(keep):
        raise ValidationError("design has no comparisons")
    s = compose(truth)
    k, i, j, n = design.k[keep], design.i[keep], design.j[keep], design.n[keep]
    p = sigmoid(s[k, i] - s[k, j])
    y = rng.binomial(n, p)
    id_map = id_map or default_id_map(truth.n_judges, truth.n_items)
    return AggregatedCounts(id_map, k, i, j, n.astype(float), y.astype(float))


@dataclass(frozen=True)
class MetricReport:
    mse: float
    spearman: float
    ndcg: float
    sign_acc: float
    coverage: float | None = None

    def as_dict(self) -> dict:
        return {"mse": self.mse, "spearman": self.spearman, "ndcg": self.ndcg,
                "coverage": self.coverage, "sign_acc": self.sign_acc}


def descending_ranks(x: np.ndarray) -> np.ndarray:
    """Rank 1 for the largest entry; ties broken by index."""
    order = np.argsort(-np.asarray(x), kind="stable")
    ranks = np.empty(len(order), dtype=int)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def ndcg(est_scores: np.ndarray, true_scores: np.ndarray) -> float:
    N = len(true_scores)
    rel = 2.0 ** (N - descending_ranks(true_scores)) - 1.0
    discounts = 1.0 / np.log2(np.arange(2, N + 2))
    dcg = np.sum(rel[np.argsort(-np.asarray(est_scores), kind="stable")] * discounts)
    idcg = np.sum(rel[np.argsort(-np.asarray(true_scores), kind="stable")] * discounts)
    return float(dcg / idcg) if idcg > 0 else 1.0


def sign_accuracy(s_est: np.ndarray, s_true: np.ndarray) -> float:
    iu, ju = np.triu_indices(s_true.shape[1], k=1)
    return float(np.mean(np.sign(s_est[:, iu] - s_est[:, ju]) == np.sign(s_true[:, iu] - s_true[:, ju])))


def compute_metrics(est: HjaParams, truth: HjaParams,
                    intervals: tuple[np.ndarray, np.ndarray] | None = None) -> MetricReport:
    """Score MSE, consensus Spearman and NDCG@N, score-entry coverage, judge-level sign accuracy.

    ``intervals`` is a ``(lower, upper)`` pair of K x N bound matrices.
    """
    if (est.n_judges, est.n_items) != (truth.n_judges, truth.n_items):
        raise ValidationError("estimate and truth have different dimensions")
    s_est, s_true = compose(est), compose(truth)
    mse = float(np.mean((s_est - s_true) ** 2))
    rho = float(spearmanr(est.mu, truth.mu).statistic)
    coverage = None
    if intervals is not None:
        lo, hi = intervals
        coverage = float(np.mean((s_true >= lo) & (s_true <= hi)))
    return MetricReport(mse, rho, ndcg(est.mu, truth.mu), sign_accuracy(s_est, s_true), coverage)


# ---------------------------------------------------------------------------
# recovery study


@dataclass
class StudyRow:
    method: str
    grid_value: float
    metric: str
    mean: float
    err95: float
    n_ok: int


@dataclass
class StudyResult:
    grid_name: str
    rows: list[StudyRow]
    runs: list[dict] = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def value(self, method: str, grid_value: float, metric: str) -> StudyRow:
        for row in self.rows:
            if row.method == method and row.grid_value == grid_value and row.metric == metric:
                return row
        raise KeyError((method, grid_value, metric))

    def write_csv(self, stream: IO[str]) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["method", "grid_value", "metric", "mean", "err95", "n_ok"])
        for row in self.rows:
            writer.writerow([row.method, _fmt(row.grid_value), row.metric,
                             _fmt(row.mean), _fmt(row.err95), row.n_ok])


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _fit_method(method, counts, config, rank):
    if method == "hja":
        res = fit(counts, replace(config, rank=rank))
        return res.params, lambda: WaldInference(res.params, counts)
    if method == "ja":
        res = fit(counts, replace(config, rank=0))
        return res.params, lambda: WaldInference(res.params, counts)
    if method == "btl":
        params = fit_baseline(counts, "pooled")
        return params, lambda: WaldInference(params, counts, fixed_gamma=True)
    if method == "btl_svd":
        return fit_baseline(counts, "btl_svd", rank=rank, config=config), None
    raise ValidationError(f"unknown method {method!r}")


def run_single(spec: TruthSpec, n_cmp: int, config: SolverConfig, methods: Sequence[str],
               seed_keys: tuple[int, ...], fit_rank: int | None = None,
               with_coverage: bool = True, level: float = 0.95) -> dict:
    """One replication: draw truth, design and outcomes, fit every method, score it."""
    rng = _rng(*seed_keys)
    truth = generate_truth(spec, rng)
    design = allocate_comparisons(n_cmp, spec.n_judges, spec.n_items, rng)
    counts = sample_outcomes(truth, design, rng)
    rank = spec.rank if fit_rank is None else fit_rank
    out = {}
    for method in methods:
        try:
            est, make_inference = _fit_method(method, counts, config, rank)
        except HjaError as exc:
            out[method] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        intervals = None
        if with_coverage and make_inference is not None:
            try:
                intervals = make_inference().score_intervals(level)
            except HjaError as exc:
                log.info("no intervals for %s: %s", method, exc)
        metrics = compute_metrics(est, truth, intervals).as_dict()
        if make_inference is None or not with_coverage:
            metrics.pop("coverage")
        out[method] = metrics
    return out


def _run_task(args):
    return run_single(*args)


def run_recovery_study(grid_name: str, grid_values: Sequence[float], n_seeds: int,
                       spec: TruthSpec = TruthSpec(), config: SolverConfig = SolverConfig(),
                       n_cmp: int = 800, methods: Sequence[str] = METHODS,
                       fit_rank: int | None = None, with_coverage: bool = True,
                       n_jobs: int = 1) -> StudyResult:
    """Replicate the synthetic pipeline over a grid of ``n_cmp`` or ``h`` values.

    Each (grid point, repetition) owns the RNG stream seeded by
    ``(spec.seed, grid index, repetition)``. Rows report the mean and the
    half-width ``1.96 sd / sqrt(n_ok)`` of every metric.
    """
    if grid_name not in ("n_cmp", "h"):
        raise ValidationError("grid must vary 'n_cmp' or 'h'")
    tasks = []
    for gi, gv in enumerate(grid_values):
        cell_spec = replace(spec, het_scale=float(gv)) if grid_name == "h" else spec
        cell_n = int(gv) if grid_name == "n_cmp" else n_cmp
        for rep in range(n_seeds):
            tasks.append((cell_spec, cell_n, config, tuple(methods), (spec.seed, gi, rep),
                          fit_rank, with_coverage))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    rows, runs, failures = [], [], {}
    for gi, gv in enumerate(grid_values):
        cell = results[gi * n_seeds:(gi + 1) * n_seeds]
        for rep, res in enumerate(cell):
            runs.append({"grid_value": gv, "rep": rep, **res})
        for method in methods:
            ok = [r[method] for r in cell if "error" not in r[method]]
            failures[(method, gv)] = len(cell) - len(ok)
            for metric in METRICS:
                vals = np.array([r[metric] for r in ok if r.get(metric) is not None], dtype=float)
                vals = vals[np.isfinite(vals)]
                if len(vals):
                    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                    rows.append(StudyRow(method, gv, metric, float(vals.mean()),
                                         1.96 * sd / math.sqrt(len(vals)), len(vals)))
                else:
                    rows.append(StudyRow(method, gv, metric, math.nan, math.nan, 0))
    return StudyResult(grid_name, rows, runs, failures)
