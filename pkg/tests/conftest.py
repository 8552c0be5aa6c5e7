import sys

import pytest

from lmpseq import bernoulli_mean, normal_mean, poisson_mean, triangular_normal


@pytest.fixture
def bern():
    return bernoulli_mean(0.5)


@pytest.fixture
def norm():
    return normal_mean(0.0)


@pytest.fixture
def pois():
    return poisson_mean(1.0)


@pytest.fixture
def tri():
    return triangular_normal(0.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod._line(k, *mod.RESULTS[k]))
