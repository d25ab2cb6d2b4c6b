"""Evaluation protocols for judge data: hold-out accuracy, noisy-judge robustness, near-tie slices."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from .data import AggregatedCounts, ComparisonRecord, IdMap, aggregate, split_records
from .decomposition import HjaParams
from .exceptions import HjaError, InsufficientNearTiePairs, ValidationError
from .selection import select_rank
from .solver import SolverConfig, fit, fit_baseline

log = logging.getLogger(__name__)

EVAL_METHODS = ("hja", "ja", "btl")
TERTILES = ("closest", "mid", "farthest")


@dataclass(frozen=True)
class ProtocolConfig:
    test_fraction: float = 0.2
    noisy_grid: tuple[int, ...] = tuple(range(1, 11))
    report_steps: tuple[int, ...] = (1, 5, 10)
    near_tie_max_pairs: int = 20
    near_tie_min_records: int = 20
    seeds: tuple[int, ...] = tuple(range(20))
    cv_folds: int = 5

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValidationError("test_fraction must lie in (0, 1)")
        if any(m < 0 for m in self.noisy_grid):
            raise ValidationError("noisy_grid entries must be nonnegative")
        if not set(self.report_steps) <= set(self.noisy_grid) | {0}:
            raise ValidationError("report_steps must be drawn from noisy_grid")
        if not self.seeds:
            raise ValidationError("at least one seed is required")

    def to_dict(self) -> dict:
        return {"test_fraction": self.test_fraction, "noisy_grid": list(self.noisy_grid),
                "report_steps": list(self.report_steps),
                "near_tie_max_pairs": self.near_tie_max_pairs,
                "near_tie_min_records": self.near_tie_min_records,
                "seeds": list(self.seeds), "cv_folds": self.cv_folds}


@dataclass(frozen=True)
class TableRow:
    dataset: str
    method: str
    protocol: str
    slice: str
    mean: float
    sd: float
    n_seeds: int


TABLE_COLUMNS = ("dataset", "method", "protocol", "slice", "mean", "sd", "n_seeds")


def write_table_csv(rows: Sequence[TableRow], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for r in rows:
        writer.writerow([r.dataset, r.method, r.protocol, r.slice,
                         "" if math.isnan(r.mean) else repr(r.mean),
                         "" if math.isnan(r.sd) else repr(r.sd), r.n_seeds])


def _summarize(values: Sequence[float]) -> tuple[float, float, int]:
    vals = np.array([v for v in values if v is not None and np.isfinite(v)], dtype=float)
    if not len(vals):
        return math.nan, math.nan, 0
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return float(vals.mean()), sd, len(vals)


def holdout_accuracy(params: HjaParams, test: Sequence[ComparisonRecord], id_map: IdMap) -> float:
    """Fraction of non-tie test records whose direction agrees with the fitted judge scores.

    A zero score difference earns half credit.
    """
    jidx, iidx = id_map.judge_index(), id_map.item_index()
    s = params.score_matrix()
    correct, total = 0.0, 0
    for rec in test:
        if rec.outcome == 0.5:
            continue
        try:
            k, a, b = jidx[rec.judge], iidx[rec.item_a], iidx[rec.item_b]
        except KeyError as exc:
            raise ValidationError(f"label {exc.args[0]!r} missing from the id map") from None
        diff = s[k, a] - s[k, b]
        total += 1
        if diff == 0.0:
            correct += 0.5
        elif (diff > 0) == (rec.outcome == 1.0):
            correct += 1.0
    if total == 0:
        raise ValidationError("no non-tie test records to score")
    return correct / total


def noisy_judge_label(seed: int, idx: int) -> str:
    return f"noisy_{seed}_{idx}"


def inject_noisy_judges(counts: AggregatedCounts, m: int, seed: int) -> AggregatedCounts:
    """Append ``m`` fair-coin judges on a near-balanced design over all item pairs.

    Each noisy judge makes the median per-judge comparison volume of the
    input. Judge ``idx`` draws from its own stream, so the first ``m`` noisy
    judges do not depend on how many are added in total.
    """
    if m < 0:
        raise ValidationError("m must be nonnegative")
    if m == 0:
        return counts
    K, N = counts.n_judges, counts.n_items
    volume = np.bincount(counts.k, weights=counts.n, minlength=K)
    per_judge = max(1, int(round(float(np.median(volume)))))
    labels = tuple(noisy_judge_label(seed, idx) for idx in range(m))
    if set(labels) & set(counts.id_map.judges):
        raise ValidationError("noisy judge labels collide with existing judges")
    pi, pj = np.triu_indices(N, 1)
    n_pairs = len(pi)
    ks, is_, js, ns, ys = [counts.k], [counts.i], [counts.j], [counts.n], [counts.y]
    for idx in range(m):
        rng = np.random.default_rng([seed, idx])
        n = np.full(n_pairs, per_judge // n_pairs, dtype=np.int64)
        n[rng.permutation(n_pairs)[:per_judge % n_pairs]] += 1
        keep = n > 0
        n = n[keep]
        ks.append(np.full(len(n), K + idx, dtype=np.intp))
        is_.append(pi[keep])
        js.append(pj[keep])
        ns.append(n.astype(float))
        ys.append(rng.binomial(n, 0.5).astype(float))
    id_map = IdMap(counts.id_map.judges + labels, counts.id_map.items)
    return AggregatedCounts(id_map, np.concatenate(ks), np.concatenate(is_), np.concatenate(js),
                            np.concatenate(ns), np.concatenate(ys))


def rank_positions(mu: np.ndarray) -> np.ndarray:
    """Position of every item in the descending order of ``mu``; ties keep index order."""
    order = np.argsort(-np.asarray(mu, dtype=float), kind="stable")
    pos = np.empty(len(order), dtype=np.intp)
    pos[order] = np.arange(len(order))
    return pos


def ranking_accuracy(mu: np.ndarray, base_mu: np.ndarray) -> float:
    """Fraction of items holding the same rank position as in the base ranking."""
    return float(np.mean(rank_positions(mu) == rank_positions(base_mu)))


def fit_method(method: str, counts: AggregatedCounts, solver: SolverConfig,
               hja_rank: int = 1) -> HjaParams:
    if method == "hja":
        return fit(counts, replace(solver, rank=hja_rank)).params
    if method == "ja":
        return fit(counts, replace(solver, rank=0)).params
    if method == "btl":
        return fit_baseline(counts, "pooled")
    raise ValidationError(f"unknown method {method!r}")


def choose_hja_rank(data, solver: SolverConfig, folds: int = 5, seed: int = 0) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return select_rank(data, "cv", folds=folds, seed=seed, config=solver).chosen_rank


@dataclass
class RobustnessResult:
    # accuracy[method][m] -> per-seed values (NaN on fit failure)
    accuracy: dict = field(default_factory=dict)
    hja_rank: int = 0

    def rows(self, dataset: str, steps: Sequence[int]) -> list[TableRow]:
        out = []
        for method, by_step in self.accuracy.items():
            for m in steps:
                mean, sd, n = _summarize(by_step.get(m, []))
                out.append(TableRow(dataset, method, "robustness", f"m={m}", mean, sd, n))
        return out


def robustness_study(records: Sequence[ComparisonRecord] | AggregatedCounts,
                     methods: Sequence[str] = EVAL_METHODS,
                     config: ProtocolConfig = ProtocolConfig(),
                     solver: SolverConfig = SolverConfig(),
                     hja_rank: int | None = None) -> RobustnessResult:
    """Ranking accuracy of each method's consensus after noisy judges are injected.

    Each method is compared with its own consensus ranking on the original
    data. The HJA rank is chosen once on the original data and reused.
    """
    counts = records if isinstance(records, AggregatedCounts) else aggregate(list(records))
    steps = sorted(set(config.report_steps))
    if hja_rank is None and "hja" in methods:
        hja_rank = choose_hja_rank(counts, solver, config.cv_folds, config.seeds[0])
    result = RobustnessResult(hja_rank=hja_rank or 0)
    for method in methods:
        base = fit_method(method, counts, solver, hja_rank or 0).mu
        by_step: dict[int, list[float]] = {m: [] for m in steps}
        for seed in config.seeds:
            for m in steps:
                try:
                    est = fit_method(method, inject_noisy_judges(counts, m, seed), solver,
                                     hja_rank or 0)
                    by_step[m].append(ranking_accuracy(est.mu, base))
                except HjaError as exc:
                    log.info("robustness fit failed (%s, m=%d, seed=%d): %s", method, m, seed, exc)
                    by_step[m].append(math.nan)
        result.accuracy[method] = by_step
    return result


@dataclass(frozen=True)
class NearTiePair:
    item_a: str
    item_b: str
    n_records: int
    win_rate: float

    @property
    def distance(self) -> float:
        return abs(self.win_rate - 0.5)


def near_tie_pairs(train: Sequence[ComparisonRecord], config: ProtocolConfig = ProtocolConfig()
                   ) -> list[list[NearTiePair]]:
    """Select the closest-to-even item pairs and cut them into three contiguous tertiles.

    Win rates pool over judges and count ties as half a win.
    """
    tally: dict[tuple[str, str], list[float]] = {}
    for rec in train:
        a, b, y = rec.item_a, rec.item_b, rec.outcome
        if b < a:
            a, b, y = b, a, 1.0 - y
        cell = tally.setdefault((a, b), [0.0, 0.0])
        cell[0] += 1
        cell[1] += y
    cands = [NearTiePair(a, b, int(n), w / n) for (a, b), (n, w) in tally.items()
             if n >= config.near_tie_min_records]
    cands.sort(key=lambda p: (p.distance, p.item_a, p.item_b))
    chosen = cands[:config.near_tie_max_pairs]
    if len(chosen) < 3:
        raise InsufficientNearTiePairs(
            f"only {len(chosen)} item pairs have at least {config.near_tie_min_records} training records")
    return [list(part) for part in np.array_split(np.array(chosen, dtype=object), 3)]


def near_tie_study(train: Sequence[ComparisonRecord], test: Sequence[ComparisonRecord],
                   fitted: dict[str, HjaParams], id_map: IdMap,
                   config: ProtocolConfig = ProtocolConfig()) -> dict[str, dict[str, float]]:
    """Hold-out accuracy per method on the test records of each near-tie tertile."""
    tertiles = near_tie_pairs(train, config)
    out: dict[str, dict[str, float]] = {}
    for method, params in fitted.items():
        out[method] = {}
        for name, pairs in zip(TERTILES, tertiles):
            keys = {frozenset((p.item_a, p.item_b)) for p in pairs}
            sel = [r for r in test if frozenset((r.item_a, r.item_b)) in keys]
            try:
                out[method][name] = holdout_accuracy(params, sel, id_map)
            except ValidationError:
                out[method][name] = math.nan
    return out


def evaluate_protocols(records: Sequence[ComparisonRecord], dataset: str = "data",
                       methods: Sequence[str] = EVAL_METHODS,
                       config: ProtocolConfig = ProtocolConfig(),
                       solver: SolverConfig = SolverConfig(),
                       protocols: Sequence[str] = ("holdout", "robustness", "near_tie")
                       ) -> list[TableRow]:
    """Run the requested protocols and return rows with mean and sd over seeds."""
    records = list(records)
    id_map = IdMap.from_records(records)
    rows: list[TableRow] = []
    holdout = {m: [] for m in methods}
    near = {m: {t: [] for t in TERTILES} for m in methods}
    near_ok = True
    if "holdout" in protocols or "near_tie" in protocols:
        for seed in config.seeds:
            train, test = split_records(records, config.test_fraction, seed)
            fitted: dict[str, HjaParams] = {}
            try:
                train_counts = aggregate(train, id_map)
                rank = 0
                if "hja" in methods:
                    rank = choose_hja_rank(train, solver, config.cv_folds, seed)
            except HjaError as exc:
                log.info("seed %d: training split unusable: %s", seed, exc)
                train_counts = None
            for method in methods:
                if train_counts is None:
                    continue
                try:
                    fitted[method] = fit_method(method, train_counts, solver, rank)
                except HjaError as exc:
                    log.info("holdout fit failed (%s, seed=%d): %s", method, seed, exc)
            for method in methods:
                acc = math.nan
                if method in fitted:
                    try:
                        acc = holdout_accuracy(fitted[method], test, id_map)
                    except ValidationError:
                        pass
                holdout[method].append(acc)
            if "near_tie" in protocols and near_ok and fitted:
                try:
                    res = near_tie_study(train, test, fitted, id_map, config)
                except InsufficientNearTiePairs as exc:
                    warnings.warn(f"near-tie protocol skipped: {exc}", stacklevel=2)
                    near_ok = False
                    continue
                for method, by_t in res.items():
                    for t, v in by_t.items():
                        near[method][t].append(v)
    if "holdout" in protocols:
        for method in methods:
            rows.append(TableRow(dataset, method, "holdout", "all", *_summarize(holdout[method])))
    if "robustness" in protocols:
        rob = robustness_study(records, methods, config, solver)
        rows.extend(rob.rows(dataset, sorted(set(config.report_steps))))
    if "near_tie" in protocols and near_ok:
        for method in methods:
            for t in TERTILES:
                rows.append(TableRow(dataset, method, "near_tie", t, *_summarize(near[method][t])))
    return rows
