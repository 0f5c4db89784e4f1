import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from svrgkit import make_logistic, make_quadratic

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# (criterion number, description, passed, detail) appended by the acceptance tests
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, desc, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {number}: {desc}  [{detail}]")


@pytest.fixture(scope="session")
def quad():
    return make_quadratic(12, 4, 0.1, seed=3, L=2.0)


@pytest.fixture(scope="session")
def logistic():
    return make_logistic(15, 4, lambda_r=0.2, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
