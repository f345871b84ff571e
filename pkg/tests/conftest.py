"""Shared fixtures and the acceptance summary printed at the end of a run."""

from __future__ import annotations

import pytest

from bodyregion import taxonomy

_CRITERIA: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
    _CRITERIA.append((marker, outcome))


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _CRITERIA:
        terminalreporter.write_line(f"{outcome:<5}{name}")


@pytest.fixture(scope="session")
def ct_tax():
    return taxonomy.builtin("CT")


@pytest.fixture(scope="session")
def mr_tax():
    return taxonomy.builtin("MR")
