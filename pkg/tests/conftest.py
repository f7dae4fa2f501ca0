"""Shared fixtures and random-instance generators."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gini_auction import BudgetProfile, MechanismParams


def random_instance(rng, n_max=12, allow_zeros=True, allow_ties=True):
    """A random (profile, params) pair for property tests."""
    n = int(rng.integers(2, n_max + 1))
    style = rng.integers(0, 3)
    if style == 0:
        budgets = rng.exponential(1.0, n)
    elif style == 1:
        budgets = rng.lognormal(0.0, 1.0, n)
    else:
        budgets = rng.uniform(0.1, 10.0, n)
    if allow_ties and rng.random() < 0.3:
        budgets = np.round(budgets, 1)  # force exact ties
    if allow_zeros and rng.random() < 0.3:
        k_zero = int(rng.integers(1, max(2, n // 2)))
        budgets[rng.choice(n, size=min(k_zero, n - 1), replace=False)] = 0.0
    g = float(rng.uniform(0.05, 0.95))
    k_count = int(rng.integers(1, n))
    ks = sorted(rng.choice(np.arange(2, n + 1), size=min(k_count, n - 1),
                           replace=False).tolist())
    profile = BudgetProfile.of([float(b) for b in budgets])
    params = MechanismParams(gini_cap=g, winner_counts=tuple(ks))
    return profile, params


@pytest.fixture
def rng():
    return np.random.default_rng(20260824)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance scorecard past pytest's output capture."""
    try:
        from test_acceptance import SCORECARD
    except ImportError:
        return
    if SCORECARD:
        terminalreporter.section("acceptance scorecard")
        for line in SCORECARD:
            terminalreporter.write_line(line)
