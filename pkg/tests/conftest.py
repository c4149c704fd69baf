import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from msid import gen_logistic
from msid.models import LogisticMap, Pendulum, linear_oe_2nd, lower_to_state_space


@pytest.fixture(scope="session")
def logistic_dataset():
    return gen_logistic()


@pytest.fixture(scope="session")
def logistic_model():
    return lower_to_state_space(LogisticMap())


@pytest.fixture(scope="session")
def pendulum_model():
    return lower_to_state_space(Pendulum())


@pytest.fixture(scope="session")
def linear_model():
    return lower_to_state_space(linear_oe_2nd())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import CRITERION_LINES
    except ImportError:
        return
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES):
            terminalreporter.write_line(line)
