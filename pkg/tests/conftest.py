import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance report -------------------------------------------------------------

_VERDICTS: list[str] = []
_VIOLATIONS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    from greenqueue.model import AvailabilityViolation
    if call.excinfo is not None and call.excinfo.errisinstance(AvailabilityViolation):
        _VIOLATIONS.append(item.nodeid)
    return outcome


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance")
    for line in _VERDICTS:
        terminalreporter.write_line(line)
    ok = not _VIOLATIONS
    detail = "no energy-availability violation raised in any test" if ok else ", ".join(_VIOLATIONS)
    terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} energy availability across the suite: {detail}")
