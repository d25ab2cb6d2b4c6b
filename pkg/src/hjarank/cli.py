"""Command-line interface: ``hjarank {fit,decompose,simulate,select-rank,evaluate}``.

Exit status is 0 on success, 2 for invalid input or arguments and 3 when the
solver or the inference step fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from datetime import datetime, timezone
from itertools import combinations
from typing import Sequence

import numpy as np

from .data import IdMap, aggregate, check_connectivity, parse_records
from .decomposition import check_constraints, decompose
from .evaluation import EVAL_METHODS, ProtocolConfig, evaluate_protocols, write_table_csv
from .exceptions import FormatError, HjaError, SingularInformation, ValidationError
from .inference import LEVERAGE_SMOOTH_MIN, TargetSpec, WaldInference, leverage_diagnostics
from .selection import select_rank, spectral_scree
from .simulation import METHODS, TruthSpec, run_recovery_study
from .solver import SolverConfig, fit

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3

TARGET_GROUPS = ("consensus_contrasts", "judge_contrasts", "gammas", "pairwise_probs",
                 "score_entries", "leverage")

DEFAULTS = {
    "input": None, "format": "csv", "rank": "1", "rank_method": "bic", "tau": 30.0,
    "tol": 1e-8, "grad_tol": None, "max_iters": 500, "seed": 0, "level": 0.95,
    "targets": "consensus_contrasts", "out": "-", "threads": 1, "deterministic": False,
    "allow_disconnected": False,
    # select-rank
    "r_max": None, "folds": 5, "scree": False, "scree_reference": "fit",
    # simulate
    "grid": "n_cmp=400,800,1200,3000", "seeds": 20, "n_items": 8, "n_judges": 4,
    "true_rank": 1, "het_scale": 1.0, "n_cmp": 800, "methods": None, "fit_rank": None,
    "no_coverage": False,
    # evaluate
    "dataset": "data", "protocols": "holdout,robustness,near_tie", "test_fraction": 0.2,
    "noisy_grid": "1,2,3,4,5,6,7,8,9,10", "report_steps": "1,5,10",
    "near_tie_max_pairs": 20, "near_tie_min_records": 20,
}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--out", help="output path, '-' for stdout")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="cap on worker processes")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="omit the timestamp so identical runs give identical bytes")


def _add_solver(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--grad-tol", type=float, help="also require this projected gradient size")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--allow-disconnected", action="store_true", default=None)


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input")
    p.add_argument("--format", choices=("csv", "jsonl"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hjarank", description="Judge-aware ranking from pairwise comparisons.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the model and report intervals")
    _add_input(p)
    _add_common(p)
    _add_solver(p)
    p.add_argument("--rank", help="integer rank or 'auto'")
    p.add_argument("--rank-method", choices=("bic", "cv"))
    p.add_argument("--level", type=float)
    p.add_argument("--targets", help="comma-separated groups or kind:label:label entries")

    p = sub.add_parser("decompose", help="canonical parameters of a score matrix CSV")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--rank", help="integer rank or 'auto'")
    p.add_argument("--tol", type=float)

    p = sub.add_parser("simulate", help="synthetic recovery study")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--grid", help="n_cmp=V1,V2,... or h=V1,V2,...")
    p.add_argument("--seeds", type=int, help="repetitions per grid value")
    p.add_argument("--n-items", type=int)
    p.add_argument("--n-judges", type=int)
    p.add_argument("--true-rank", type=int)
    p.add_argument("--het-scale", type=float)
    p.add_argument("--n-cmp", type=int, help="comparisons per dataset when the grid varies h")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--fit-rank", type=int)
    p.add_argument("--no-coverage", action="store_true", default=None)
    p.add_argument("--level", type=float)

    p = sub.add_parser("select-rank", help="choose the heterogeneity rank")
    _add_input(p)
    _add_common(p)
    _add_solver(p)
    p.add_argument("--rank-method", choices=("bic", "cv"))
    p.add_argument("--r-max", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--scree", action="store_true", default=None,
                   help="also report the spectral scree")
    p.add_argument("--scree-reference", choices=("fit", "projection"),
                   help="consensus part removed before the scree SVD")

    p = sub.add_parser("evaluate", help="hold-out, robustness and near-tie protocols")
    _add_input(p)
    _add_common(p)
    _add_solver(p)
    p.add_argument("--dataset")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(EVAL_METHODS)}")
    p.add_argument("--protocols")
    p.add_argument("--seeds", type=int, help="number of seeds, starting at --seed")
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--noisy-grid")
    p.add_argument("--report-steps")
    p.add_argument("--near-tie-max-pairs", type=int)
    p.add_argument("--near-tie-min-records", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the optional JSON config file and explicit flags."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config file: {exc}") from None
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        cfg[key] = value
    known = sorted(set(vars(args)) - {"config", "command"})
    resolved = {k: DEFAULTS.get(k) for k in known}
    for key, value in cfg.items():
        if key not in known:
            raise ValidationError(f"unknown config key {key!r} for {args.command}")
        resolved[key] = value
    return resolved


def _solver_config(cfg: dict, rank: int = 1) -> SolverConfig:
    grad_tol = None if cfg.get("grad_tol") is None else float(cfg["grad_tol"])
    return SolverConfig(rank=rank, tau=float(cfg["tau"]), tol=float(cfg["tol"]), grad_tol=grad_tol,
                        max_iters=int(cfg["max_iters"]), seed=int(cfg["seed"]),
                        allow_disconnected=bool(cfg["allow_disconnected"]))


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise ValidationError(f"expected a comma-separated integer list, got {text!r}") from None


def _str_list(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(x) for x in text]
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _load_records(cfg: dict):
    if not cfg["input"]:
        raise ValidationError("--input is required")
    try:
        with open(cfg["input"], "rb") as fh:
            records, stats = parse_records(fh, cfg["format"])
    except OSError as exc:
        raise ValidationError(f"cannot read input: {exc}") from None
    if stats.dropped:
        logging.getLogger("hjarank").warning("dropped %d invalid records", stats.dropped)
    return records, stats


def _write(cfg: dict, text: str) -> None:
    if cfg["out"] in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(cfg["out"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _dump(payload: dict, cfg: dict) -> str:
    if not cfg.get("deterministic"):
        payload["timestamp"] = datetime.now(timezone.utc).isoformat()
    return json.dumps(payload, indent=2, allow_nan=True) + "\n"


def _parse_rank(value) -> int | str:
    if value in ("auto", None):
        return "auto"
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"--rank expects an integer or 'auto', got {value!r}") from None


def parse_targets(text, params, id_map: IdMap) -> list[TargetSpec]:
    """Expand target groups, or parse explicit ``kind:label[:label...]`` entries."""
    K, N = params.n_judges, params.n_items
    jidx, iidx = id_map.judge_index(), id_map.item_index()
    out: list[TargetSpec] = []
    for entry in _str_list(text):
        if entry == "consensus_contrasts":
            out += [TargetSpec("consensus_contrast", (i, j)) for i, j in combinations(range(N), 2)]
        elif entry == "judge_contrasts":
            out += [TargetSpec("judge_contrast", (k, i, j)) for k in range(K)
                    for i, j in combinations(range(N), 2)]
        elif entry == "pairwise_probs":
            out += [TargetSpec("pairwise_prob", (k, i, j)) for k in range(K)
                    for i, j in combinations(range(N), 2)]
        elif entry == "gammas":
            out += [TargetSpec("gamma", (k,)) for k in range(K)]
        elif entry == "score_entries":
            out += [TargetSpec("score_entry", (k, i)) for k in range(K) for i in range(N)]
        elif entry == "leverage":
            h = np.linalg.norm(params.u @ params.v.T, axis=1)
            out += [TargetSpec("leverage", (k,)) for k in range(K) if h[k] > LEVERAGE_SMOOTH_MIN]
        elif ":" in entry:
            kind, *labels = entry.split(":")
            judge_first = kind in ("judge_contrast", "pairwise_prob", "score_entry", "gamma",
                                   "leverage")
            idx = []
            for pos, lab in enumerate(labels):
                table = jidx if (judge_first and pos == 0) else iidx
                if lab not in table:
                    raise ValidationError(f"unknown label {lab!r} in target {entry!r}")
                idx.append(table[lab])
            out.append(TargetSpec(kind, tuple(idx)))
        else:
            raise ValidationError(f"unknown target {entry!r}; groups are {', '.join(TARGET_GROUPS)}")
    return out


def cmd_fit(cfg: dict) -> int:
    records, stats = _load_records(cfg)
    counts = aggregate(records)
    graph = check_connectivity(counts)
    if cfg["allow_disconnected"]:
        warnings.warn("--allow-disconnected: only the pooled graph is required to be connected; "
                      "interval guarantees are weaker under partial sampling", stacklevel=2)
    rank = _parse_rank(cfg["rank"])
    selection = None
    if rank == "auto":
        selection = select_rank(records, cfg["rank_method"], folds=int(DEFAULTS["folds"]),
                                seed=int(cfg["seed"]), config=_solver_config(cfg))
        rank = selection.chosen_rank
    solver = _solver_config(cfg, rank)
    result = fit(counts, solver)
    params = result.params
    if not result.converged:
        warnings.warn(f"solver stopped after {result.iterations} iterations without meeting the "
                      "tolerance; intervals may be unreliable", stacklevel=2)
    try:
        wald = WaldInference(params, counts)
    except SingularInformation as exc:
        exc.graph_report = exc.graph_report or graph
        raise
    targets = parse_targets(cfg["targets"], params, counts.id_map)
    intervals = []
    for t in targets:
        iv = wald.interval(t, float(cfg["level"]))
        intervals.append({"target": t.label(counts.id_map), **iv.to_dict()})
    uvt = params.u @ params.v.T
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "config": {**cfg, "resolved_rank": rank, "solver": solver.to_dict()},
        "id_map": counts.id_map.to_dict(),
        "records": {"kept": stats.kept, "dropped": stats.dropped},
        "rank_selection": selection.to_dict() if selection else None,
        "params": params.to_dict(),
        "constraints": check_constraints(params, 1e-6).to_dict(),
        "converged": result.converged,
        "iterations": result.iterations,
        "nll_trace": list(result.nll_trace),
        "intervals": intervals,
        "leverage": leverage_diagnostics(params).rows(counts.id_map),
        "uvt": {"rows": counts.n_judges, "cols": counts.n_items, "data": uvt.tolist()},
        "graph_report": graph.to_dict(),
    }
    _write(cfg, _dump(payload, cfg))
    return EXIT_OK


def read_score_matrix(path: str) -> tuple[list[str], list[str], np.ndarray]:
    """Read a CSV whose header holds item labels after a leading judge column."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ValidationError(f"cannot read input: {exc}") from None
    if len(rows) < 2:
        raise FormatError("score matrix needs a header and at least one judge row")
    header = rows[0]
    items = header[1:]
    judges, values = [], []
    for r in rows[1:]:
        if len(r) != len(header):
            raise FormatError(f"row for {r[0]!r} has {len(r)} fields, expected {len(header)}")
        judges.append(r[0])
        try:
            values.append([float(x) for x in r[1:]])
        except ValueError:
            raise FormatError(f"non-numeric score in row {r[0]!r}") from None
    return judges, items, np.array(values, dtype=float)


def cmd_decompose(cfg: dict) -> int:
    if not cfg["input"]:
        raise ValidationError("--input is required")
    judges, items, s = read_score_matrix(cfg["input"])
    params = decompose(s, rank=_parse_rank(cfg["rank"]), tol=float(cfg["tol"]))
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "decompose",
        "config": cfg,
        "id_map": {"judges": judges, "items": items},
        "params": params.to_dict(),
        "constraints": check_constraints(params, 1e-6).to_dict(),
    }
    _write(cfg, _dump(payload, cfg))
    return EXIT_OK


def cmd_simulate(cfg: dict) -> int:
    grid = str(cfg["grid"])
    if "=" not in grid:
        raise ValidationError("--grid must look like n_cmp=400,800 or h=0,1,2")
    name, values = grid.split("=", 1)
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"bad grid values {values!r}") from None
    if name not in ("n_cmp", "h") or not vals:
        raise ValidationError("--grid must vary n_cmp or h over at least one value")
    if name == "n_cmp":
        vals = [int(v) for v in vals]
    spec = TruthSpec(n_items=int(cfg["n_items"]), n_judges=int(cfg["n_judges"]),
                     rank=int(cfg["true_rank"]), het_scale=float(cfg["het_scale"]),
                     seed=int(cfg["seed"]))
    methods = _str_list(cfg["methods"]) if cfg["methods"] else list(METHODS)
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValidationError(f"unknown methods {sorted(bad)}")
    study = run_recovery_study(name, vals, int(cfg["seeds"]), spec, _solver_config(cfg),
                               n_cmp=int(cfg["n_cmp"]), methods=methods,
                               fit_rank=cfg["fit_rank"], with_coverage=not cfg["no_coverage"],
                               n_jobs=max(1, int(cfg["threads"])))
    buf = io.StringIO()
    study.write_csv(buf)
    _write(cfg, buf.getvalue())
    return EXIT_OK


def cmd_select_rank(cfg: dict) -> int:
    records, _ = _load_records(cfg)
    counts = aggregate(records)
    solver = _solver_config(cfg)
    sel = select_rank(records, cfg["rank_method"], r_max=cfg["r_max"], folds=int(cfg["folds"]),
                      seed=int(cfg["seed"]), config=solver)
    payload = {"schema_version": SCHEMA_VERSION, "command": "select-rank", "config": cfg,
               "id_map": counts.id_map.to_dict(), **sel.to_dict()}
    if cfg["scree"]:
        payload["scree"] = spectral_scree(counts, solver,
                                          reference=cfg["scree_reference"]).tolist()
    _write(cfg, _dump(payload, cfg))
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    records, _ = _load_records(cfg)
    seed0 = int(cfg["seed"])
    pconf = ProtocolConfig(test_fraction=float(cfg["test_fraction"]),
                           noisy_grid=_int_list(cfg["noisy_grid"]),
                           report_steps=_int_list(cfg["report_steps"]),
                           near_tie_max_pairs=int(cfg["near_tie_max_pairs"]),
                           near_tie_min_records=int(cfg["near_tie_min_records"]),
                           seeds=tuple(range(seed0, seed0 + int(cfg["seeds"]))))
    methods = _str_list(cfg["methods"]) if cfg["methods"] else list(EVAL_METHODS)
    bad = set(methods) - set(EVAL_METHODS)
    if bad:
        raise ValidationError(f"unknown methods {sorted(bad)}")
    protocols = _str_list(cfg["protocols"])
    bad = set(protocols) - {"holdout", "robustness", "near_tie"}
    if bad:
        raise ValidationError(f"unknown protocols {sorted(bad)}")
    rows = evaluate_protocols(records, str(cfg["dataset"]), methods, pconf,
                              _solver_config(cfg), protocols)
    buf = io.StringIO()
    write_table_csv(rows, buf)
    _write(cfg, buf.getvalue())
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "decompose": cmd_decompose, "simulate": cmd_simulate,
            "select-rank": cmd_select_rank, "evaluate": cmd_evaluate}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except HjaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        report = getattr(exc, "graph_report", None)
        if report is not None:
            print(json.dumps(report.to_dict()), file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
