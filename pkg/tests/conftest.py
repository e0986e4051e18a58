import numpy as np
import pytest

from tkan.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(12345, "tests")


@pytest.fixture
def np_rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
