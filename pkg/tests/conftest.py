"""Shared test setup.

NUMBA_NUM_THREADS must be raised before numba is first imported so the
thread-count-independence tests can actually vary the thread count, even on
single-core CI boxes.
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest

from mcdiffusim import Scenario, SphericalCell

# filled by tests/test_acceptance.py; echoed after the run so the one-line
# PASS/FAIL verdicts survive pytest's stdout capture of passing tests
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


@pytest.fixture
def single_cell_scenario():
    return Scenario(
        diffusion=79.4,
        emitted=10_000,
        cells=(SphericalCell(center=(0.0, 0.0, 6.0), radius=1.0, label="R"),),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
