"""Collects acceptance results and prints them after the test session."""

import pytest

_RESULTS = {}


@pytest.fixture
def record():
    """``record(number, title, measured, allowed, ok=None)``; ok defaults to measured <= allowed."""

    def _record(number, title, measured, allowed, ok=None):
        passed = bool(measured <= allowed) if ok is None else bool(ok)
        _RESULTS[number] = (title, float(measured), float(allowed), passed)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, measured, allowed, passed = _RESULTS[number]
        flag = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{flag} [{number:2d}] {title}: measured {measured:.3e}, limit {allowed:.3e}")
