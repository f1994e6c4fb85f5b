import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bergman_lab.geometry import build_measure, build_set

settings.register_profile("ci", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def haar_circle():
    return build_measure(build_set("circle"), {"kind": "constant", "scale": 1 / (2 * math.pi)})


@pytest.fixture(scope="session")
def half_interval():
    """[-1, 1] with density 1/2 (a probability measure)."""
    return build_measure(build_set("interval"), {"kind": "constant", "scale": 0.5})


@pytest.fixture(scope="session")
def unit_interval_density():
    """[-1, 1] with density 1 (mass 2)."""
    return build_measure(build_set("interval"), {"kind": "constant", "scale": 1.0})


@pytest.fixture(scope="session")
def haar_torus():
    return build_measure(build_set("torus2"), {"kind": "constant", "normalize": True})


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, print it, then assert."""

    def check(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        CRITERIA.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
