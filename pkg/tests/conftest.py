"""
Pytest configuration and shared fixtures for the adaprl test-suite.

Run all tests (parallel by default):
    ./scripts/run-tests.sh

Run sequentially:
    ./scripts/run-tests.sh -p 1

Run a single suite:
    uv run pytest tests/test_losses.py -v

Skip the long trend reproductions and wall-clock checks:
    uv run pytest tests/ -m "not slow and not timing" -v
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Make helpers importable from test modules
sys.path.insert(0, str(Path(__file__).parent))

from adaprl.data import Column, ColumnKind, Schema, from_arrays, synth_heteroscedastic  # noqa: E402

# ---------------------------------------------------------------------------
# Markers
# ---------------------------------------------------------------------------


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: trend reproductions that take minutes")
    config.addinivalue_line("markers", "timing: wall-clock ratio checks; run with -p 1")


# ---------------------------------------------------------------------------
# Data fixtures
# ---------------------------------------------------------------------------


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def hetero_small():
    """600 generated rows, three numeric features."""
    return synth_heteroscedastic(600, 3, seed=5)


@pytest.fixture()
def mixed_dataset():
    """Numeric + categorical features, two targets and a weight column."""
    gen = np.random.default_rng(9)
    n = 40
    schema = Schema(
        (
            Column("a", ColumnKind.NUMERIC),
            Column("b", ColumnKind.NUMERIC),
            Column("city", ColumnKind.CATEGORICAL),
            Column("t1", ColumnKind.TARGET),
            Column("t2", ColumnKind.TARGET),
            Column("w", ColumnKind.WEIGHT),
        )
    )
    return from_arrays(
        schema,
        {
            "a": gen.normal(size=n),
            "b": gen.normal(size=n),
            "city": gen.integers(0, 3, size=n),
            "t1": gen.normal(size=n),
            "t2": gen.normal(size=n),
            "w": gen.uniform(0.5, 2.0, size=n),
        },
        vocabularies={"city": ("oslo", "lima", "pune")},
    )
