"""Regenerate tests/data/synthetic_500.csv: 500 records from a heterogeneous truth."""

import sys
from pathlib import Path

import numpy as np

from hjarank.data import write_records
from hjarank.simulation import TruthSpec, allocate_comparisons, generate_truth, sample_outcomes

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "synthetic_500.csv"


def main() -> None:
    rng = np.random.default_rng(2024)
    truth = generate_truth(TruthSpec(n_items=6, n_judges=4, rank=1, het_scale=1.0), rng)
    counts = sample_outcomes(truth, allocate_comparisons(500, 4, 6, rng), rng)
    records = counts.to_records()
    flip = rng.random(len(records)) < 0.5
    records = [records[t].flipped() if flip[t] else records[t] for t in rng.permutation(len(records))]
    with open(OUT if len(sys.argv) < 2 else sys.argv[1], "w", encoding="utf-8", newline="") as fh:
        write_records(records, fh)


if __name__ == "__main__":
    main()
