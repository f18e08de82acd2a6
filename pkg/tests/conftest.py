import numpy as np
import pytest

from kflow.kernels import KernelSpec

ACCEPTANCE_LINES = []


@pytest.fixture
def gauss():
    return KernelSpec.parse("gaussian", [1.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
