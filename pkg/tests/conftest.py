import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hjarank.simulation import TruthSpec, allocate_comparisons, generate_truth, sample_outcomes

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA_DIR = Path(__file__).parent / "data"

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def fixture_csv() -> Path:
    return DATA_DIR / "synthetic_500.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def simulated_counts(n_items=8, n_judges=4, rank=1, h=1.0, n_cmp=3000, seed=0):
    rng = np.random.default_rng(seed)
    truth = generate_truth(TruthSpec(n_items, n_judges, rank, h), rng)
    counts = sample_outcomes(truth, allocate_comparisons(n_cmp, n_judges, n_items, rng), rng)
    return truth, counts


@pytest.fixture
def sim3000():
    return simulated_counts()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
