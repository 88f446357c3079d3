import numpy as np
import pytest

from apbit import backend

ACCEPTANCE_LINES = []


@pytest.fixture(params=backend.available())
def kernels(request):
    return backend.get(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
