import pytest
from hypothesis import HealthCheck, settings

from ringlab.model import TriangularFD, default_scenario

settings.register_profile(
    "ringlab", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ringlab")


@pytest.fixture
def fd():
    return TriangularFD.from_mph()


@pytest.fixture
def scenario():
    return default_scenario()


def pytest_terminal_summary(terminalreporter):
    from support import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
