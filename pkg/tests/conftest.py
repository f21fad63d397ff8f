import numpy as np
import pytest

from mfstab import EmpiricalMeasure


def random_cloud(rng, n, d, scale=1.0):
    return EmpiricalMeasure(scale * rng.standard_normal((n, d)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
