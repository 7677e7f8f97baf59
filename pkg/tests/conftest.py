import numpy as np
import pytest

from chemoband.model import BandParams, ModelParams, Regime

ACCEPTANCE_LINES = []


@pytest.fixture
def table1():
    """Reference parameter set (the table1 preset), d = 1.3."""
    return ModelParams(tau=0.05, mu=0.25, beta=0.1625, k=1.0), BandParams(1.5, 4.0, 1.0)


@pytest.fixture
def critical():
    return ModelParams.from_d(1.0, tau=0.05, mu=0.25), BandParams(1.5, 4.0, 1.0, Regime.UNLIMITED_CRITICAL)


@pytest.fixture
def limited():
    return ModelParams(tau=0.05, mu=0.25, beta=0.25, k=1.0), BandParams(1.5, 4.0, 1.0, Regime.LIMITED)


@pytest.fixture
def acceptance_log():
    """Collects ``(n, line)`` results for the terminal summary."""
    return ACCEPTANCE_LINES


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])
