import numpy as np
import pytest

from sentlab.data import make_benchmark


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_splits():
    """A shrunken corruption benchmark that runs in well under a second."""
    return make_benchmark(7, n_train=300, n_dev=120, n_test=200)


@pytest.fixture(scope="session")
def small_selftrain_splits():
    return make_benchmark(7, n_train=60, n_dev=120, n_test=200, n_unlabeled=300)


ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
