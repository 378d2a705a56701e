from dataclasses import replace

import numpy as np
import pytest

from cvqkd_cpe import ExperimentConfig

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_config():
    """Default physics on a short frame (4096 symbols) for fast end-to-end tests."""
    return replace(ExperimentConfig(), n_symbols=4096, guard_symbols=64, calibration_frames=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
