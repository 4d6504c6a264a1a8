import numpy as np
import pytest

from imblab.core import ConfusionMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cm(rng, K, low=1, high=40, zero_prob=0.2):
    """Random confusion matrix with every class supported."""
    cm = rng.integers(low, high, size=(K, K))
    cm = np.where(rng.random((K, K)) < zero_prob, 0, cm)
    for k in range(K):
        if cm[k].sum() == 0:
            cm[k, rng.integers(K)] = 1
    return ConfusionMatrix(cm)


def replicate_row(cm, k, m):
    c = cm.counts.copy()
    c[k] *= m
    return ConfusionMatrix(c)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
