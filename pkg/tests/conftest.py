import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def random_simplex(rng, shape):
    v = rng.gamma(1.0, size=shape)
    return v / v.sum(axis=-1, keepdims=True)


# acceptance criteria append "CRITERION k: PASS|FAIL ..." lines here
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
