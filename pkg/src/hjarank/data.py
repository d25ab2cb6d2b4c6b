"""Ingestion, aggregation and splitting of multi-judge pairwise comparisons.

A comparison ``(judge, item_a, item_b, outcome)`` records that ``judge``
preferred ``item_a`` (outcome 1), ``item_b`` (outcome 0) or neither (0.5).
Records are aggregated into per-triple counts over the observed set of
``(k, i, j)`` with ``i < j``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import FormatError, ValidationError

CSV_HEADER = ("judge", "item_a", "item_b", "outcome")
VALID_OUTCOMES = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class ComparisonRecord:
    judge: str
    item_a: str
    item_b: str
    outcome: float

    def __post_init__(self):
        if self.item_a == self.item_b:
            raise ValidationError(f"record compares item {self.item_a!r} with itself")
        if self.outcome not in VALID_OUTCOMES:
            raise ValidationError(f"outcome {self.outcome!r} is not one of 0, 0.5, 1")

    def flipped(self) -> "ComparisonRecord":
        return ComparisonRecord(self.judge, self.item_b, self.item_a, 1.0 - self.outcome)


@dataclass(frozen=True)
class DropStats:
    kept: int
    dropped: int


@dataclass(frozen=True)
class IdMap:
    judges: tuple[str, ...]
    items: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.judges)) != len(self.judges) or len(set(self.items)) != len(self.items):
            raise ValidationError("judge and item labels must be unique")

    @property
    def n_judges(self) -> int:
        return len(self.judges)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def judge_index(self) -> dict[str, int]:
        return {label: k for k, label in enumerate(self.judges)}

    def item_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.items)}

    def to_dict(self) -> dict:
        return {"judges": list(self.judges), "items": list(self.items)}

    @classmethod
    def from_records(cls, records: Iterable[ComparisonRecord]) -> "IdMap":
        judges: dict[str, None] = {}
        items: dict[str, None] = {}
        for rec in records:
            judges.setdefault(rec.judge)
            items.setdefault(rec.item_a)
            items.setdefault(rec.item_b)
        return cls(tuple(judges), tuple(items))


@dataclass(frozen=True, eq=False)
class AggregatedCounts:
    """Counts over the observed triples, stored as parallel arrays sorted by ``(k, i, j)``.

    ``n[c]`` is the number of comparisons in cell ``c`` and ``y[c]`` the number
    of times item ``i[c]`` was preferred to ``j[c]`` (ties add 0.5).
    """

    id_map: IdMap
    k: np.ndarray
    i: np.ndarray
    j: np.ndarray
    n: np.ndarray
    y: np.ndarray
    n_total: float = field(init=False)

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.intp)
        i = np.asarray(self.i, dtype=np.intp)
        j = np.asarray(self.j, dtype=np.intp)
        n = np.asarray(self.n, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if not (k.shape == i.shape == j.shape == n.shape == y.shape) or k.ndim != 1:
            raise ValidationError("cell arrays must be one-dimensional and of equal length")
        if np.any(i >= j):
            raise ValidationError("cells must satisfy i < j")
        if np.any(n <= 0):
            raise ValidationError("every stored cell needs a positive count")
        if np.any(y < 0) or np.any(y > n):
            raise ValidationError("win counts must lie in [0, n]")
        if len(k) and (k.min() < 0 or k.max() >= self.id_map.n_judges
                       or i.min() < 0 or j.max() >= self.id_map.n_items):
            raise ValidationError("cell index out of range of the id map")
        order = np.lexsort((j, i, k))
        keys = np.stack([k[order], i[order], j[order]], axis=1)
        if len(keys) > 1 and np.any(np.all(keys[1:] == keys[:-1], axis=1)):
            raise ValidationError("duplicate (k, i, j) cells")
        for name, arr in (("k", k), ("i", i), ("j", j), ("n", n), ("y", y)):
            arr = np.ascontiguousarray(arr[order])
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_total", float(self.n.sum()))

    @property
    def n_judges(self) -> int:
        return self.id_map.n_judges

    @property
    def n_items(self) -> int:
        return self.id_map.n_items

    @property
    def n_cells(self) -> int:
        return len(self.n)

    @property
    def ybar(self) -> np.ndarray:
        return self.y / self.n

    @property
    def cells(self) -> dict[tuple[int, int, int], tuple[float, float]]:
        return {
            (int(k), int(i), int(j)): (float(n), float(y))
            for k, i, j, n, y in zip(self.k, self.i, self.j, self.n, self.y)
        }

    def __eq__(self, other):
        if not isinstance(other, AggregatedCounts):
            return NotImplemented
        return (self.id_map == other.id_map
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("k", "i", "j", "n", "y")))

    def pooled(self) -> "AggregatedCounts":
        """Judge-summed counts as a single-judge data set."""
        key = self.i * self.n_items + self.j
        uniq, inv = np.unique(key, return_inverse=True)
        n = np.bincount(inv, weights=self.n)
        y = np.bincount(inv, weights=self.y)
        return AggregatedCounts(
            IdMap(("pooled",), self.id_map.items),
            np.zeros(len(uniq), dtype=np.intp), uniq // self.n_items, uniq % self.n_items, n, y,
        )

    def judge_subset(self, k: int) -> "AggregatedCounts":
        """Cells of judge ``k`` as a single-judge data set."""
        mask = self.k == k
        return AggregatedCounts(
            IdMap((self.id_map.judges[k],), self.id_map.items),
            np.zeros(int(mask.sum()), dtype=np.intp), self.i[mask], self.j[mask],
            self.n[mask], self.y[mask],
        )

    def restrict_judges(self, judges: Sequence[int]) -> "AggregatedCounts":
        judges = list(judges)
        remap = {old: new for new, old in enumerate(judges)}
        mask = np.isin(self.k, judges)
        return AggregatedCounts(
            IdMap(tuple(self.id_map.judges[k] for k in judges), self.id_map.items),
            np.array([remap[int(k)] for k in self.k[mask]], dtype=np.intp),
            self.i[mask], self.j[mask], self.n[mask], self.y[mask],
        )

    def with_ybar(self, ybar: np.ndarray) -> "AggregatedCounts":
        """Same design with win counts replaced by ``n * ybar``."""
        return AggregatedCounts(self.id_map, self.k, self.i, self.j, self.n, self.n * np.asarray(ybar))

    def scaled(self, factor: float) -> "AggregatedCounts":
        return AggregatedCounts(self.id_map, self.k, self.i, self.j, self.n * factor, self.y * factor)

    def to_snapshot(self) -> dict:
        return {
            **self.id_map.to_dict(),
            "cells": [
                {"k": int(k), "i": int(i), "j": int(j), "n": float(n), "y": float(y)}
                for k, i, j, n, y in zip(self.k, self.i, self.j, self.n, self.y)
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "AggregatedCounts":
        cells = snap["cells"]
        return cls(
            IdMap(tuple(snap["judges"]), tuple(snap["items"])),
            [c["k"] for c in cells], [c["i"] for c in cells], [c["j"] for c in cells],
            [c["n"] for c in cells], [c["y"] for c in cells],
        )

    def to_records(self) -> list[ComparisonRecord]:
        """Expand counts into individual records preserving every (n, Y).

        A fractional win count contributes one tie record.
        """
        out = []
        for k, i, j, n, y in zip(self.k, self.i, self.j, self.n, self.y):
            n_int = int(round(n))
            if abs(n - n_int) > 1e-9:
                raise ValidationError("only integer cell counts can be expanded into records")
            wins = int(math.floor(y + 1e-9))
            tie = (y - wins) > 1e-9
            judge, a, b = self.id_map.judges[k], self.id_map.items[i], self.id_map.items[j]
            out.extend(ComparisonRecord(judge, a, b, 1.0) for _ in range(wins))
            if tie:
                out.append(ComparisonRecord(judge, a, b, 0.5))
            out.extend(ComparisonRecord(judge, a, b, 0.0) for _ in range(n_int - wins - int(tie)))
        return out


@dataclass(frozen=True)
class GraphReport:
    per_judge_connected: list[bool]
    pooled_connected: bool
    components: list[list[list[int]]]
    pooled_components: list[list[int]]

    @property
    def all_connected(self) -> bool:
        return all(self.per_judge_connected)

    def to_dict(self) -> dict:
        return {
            "per_judge_connected": list(self.per_judge_connected),
            "pooled_connected": self.pooled_connected,
            "components": self.components,
            "pooled_components": self.pooled_components,
        }


def _parse_outcome(value) -> float | None:
    if isinstance(value, bool):
        return None
    try:
        y = float(value)
    except (TypeError, ValueError):
        return None
    return y if y in VALID_OUTCOMES else None


def parse_records(source: IO[bytes] | str, format: str = "csv") -> tuple[list[ComparisonRecord], DropStats]:
    """Read comparison records from a UTF-8 byte stream (or a path).

    Rows whose outcome is not exactly 0, 0.5 or 1 are dropped and counted.
    Rows comparing an item with itself are dropped as well.
    """
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return parse_records(fh, format)
    text = source.read()
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise FormatError(f"input is not valid UTF-8: {exc}") from exc
    if format == "csv":
        rows = _csv_rows(text)
    elif format == "jsonl":
        rows = _jsonl_rows(text)
    else:
        raise FormatError(f"unknown input format {format!r}")

    records, dropped = [], 0
    for judge, a, b, raw in rows:
        y = _parse_outcome(raw)
        if y is None or a == b:
            dropped += 1
            continue
        records.append(ComparisonRecord(judge, a, b, y))
    return records, DropStats(len(records), dropped)


def _csv_rows(text: str):
    reader = csv.reader(io.StringIO(text), quoting=csv.QUOTE_NONE)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise FormatError(f"CSV header must be {','.join(CSV_HEADER)}, got {header!r}")
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise FormatError(f"line {lineno}: expected 4 fields, got {len(row)} (labels may not contain commas)")
        yield row[0], row[1], row[2], row[3].strip()


def _jsonl_rows(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict) or not all(key in obj for key in CSV_HEADER):
            raise FormatError(f"line {lineno}: object must have keys {', '.join(CSV_HEADER)}")
        yield str(obj["judge"]), str(obj["item_a"]), str(obj["item_b"]), obj["outcome"]


def _format_outcome(y: float) -> str:
    return {0.0: "0", 0.5: "0.5", 1.0: "1"}[y]


def write_records(records: Iterable[ComparisonRecord], stream: IO[str], format: str = "csv") -> None:
    if format == "csv":
        stream.write(",".join(CSV_HEADER) + "\n")
        for r in records:
            if any("," in s or "\n" in s for s in (r.judge, r.item_a, r.item_b)):
                raise ValidationError("labels containing commas or newlines cannot be written as CSV")
            stream.write(f"{r.judge},{r.item_a},{r.item_b},{_format_outcome(r.outcome)}\n")
    elif format == "jsonl":
        for r in records:
            obj = {"judge": r.judge, "item_a": r.item_a, "item_b": r.item_b, "outcome": r.outcome}
            stream.write(json.dumps(obj) + "\n")
    else:
        raise FormatError(f"unknown output format {format!r}")


def aggregate(records: Sequence[ComparisonRecord], id_map: IdMap | None = None) -> AggregatedCounts:
    """Aggregate records into per-triple counts.

    Labels are indexed by first appearance unless ``id_map`` is given, in
    which case every label must already be present in it.
    """
    if not records:
        raise ValidationError("cannot aggregate an empty record list")
    if id_map is None:
        id_map = IdMap.from_records(records)
    jidx, iidx = id_map.judge_index(), id_map.item_index()
    cells: dict[tuple[int, int, int], list[float]] = {}
    for rec in records:
        if rec.item_a == rec.item_b:
            raise ValidationError(f"record compares item {rec.item_a!r} with itself")
        try:
            k, a, b = jidx[rec.judge], iidx[rec.item_a], iidx[rec.item_b]
        except KeyError as exc:
            raise ValidationError(f"label {exc.args[0]!r} missing from the id map") from None
        if a < b:
            key, win = (k, a, b), rec.outcome
        else:
            key, win = (k, b, a), 1.0 - rec.outcome
        cell = cells.setdefault(key, [0.0, 0.0])
        cell[0] += 1.0
        cell[1] += win
    keys = sorted(cells)
    arr = np.array(keys, dtype=np.intp).reshape(-1, 3)
    vals = np.array([cells[key] for key in keys], dtype=float).reshape(-1, 2)
    return AggregatedCounts(id_map, arr[:, 0], arr[:, 1], arr[:, 2], vals[:, 0], vals[:, 1])


def _components(n_items: int, i: np.ndarray, j: np.ndarray) -> list[list[int]]:
    graph = coo_matrix((np.ones(len(i)), (i, j)), shape=(n_items, n_items))
    n_comp, labels = connected_components(graph, directed=False)
    comps = [sorted(np.flatnonzero(labels == c).tolist()) for c in range(n_comp)]
    return sorted(comps, key=lambda c: c[0])


def check_connectivity(counts: AggregatedCounts) -> GraphReport:
    """Connectivity of every judge's comparison graph and of the pooled graph."""
    N = counts.n_items
    per_judge = []
    for k in range(counts.n_judges):
        mask = counts.k == k
        per_judge.append(_components(N, counts.i[mask], counts.j[mask]))
    pooled = _components(N, counts.i, counts.j)
    return GraphReport(
        per_judge_connected=[len(c) == 1 for c in per_judge],
        pooled_connected=len(pooled) == 1,
        components=per_judge,
        pooled_components=pooled,
    )


def split_records(records: Sequence[ComparisonRecord], test_fraction: float,
                  seed: int) -> tuple[list[ComparisonRecord], list[ComparisonRecord]]:
    """Uniform record-level train/test split; both parts keep input order."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValidationError("test_fraction must lie in [0, 1)")
    n = len(records)
    n_test = int(math.floor(test_fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    test_idx = np.zeros(n, dtype=bool)
    test_idx[rng.permutation(n)[:n_test]] = True
    train = [r for r, t in zip(records, test_idx) if not t]
    test = [r for r, t in zip(records, test_idx) if t]
    return train, test


def kfold_records(records: Sequence[ComparisonRecord], folds: int, seed: int) -> list[np.ndarray]:
    """Record indices of each fold of a uniform k-fold partition."""
    if folds < 2:
        raise ValidationError("need at least two folds")
    perm = np.random.default_rng(seed).permutation(len(records))
    return [np.sort(part) for part in np.array_split(perm, folds)]
