from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sapsim import cli, scenario  # noqa: E402

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[number] = (title, report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome, detail = _CRITERIA[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"[{status}] {number:2d}. {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)


@pytest.fixture
def detail(record_property):
    """Attach a short measurement string to the acceptance line of a test."""
    return lambda text: record_property("detail", text)


_RUNS = {}


def shipped_run(name):
    """Simulation record of a bundled scenario, computed once per session."""
    if name not in _RUNS:
        _RUNS[name] = cli.simulate(scenario.Scenario.load(scenario.shipped(name)))
    return _RUNS[name]


SHIPPED = ("particle_rest", "particle_rest_dt1e-2", "stiction", "spring_order_study", "clutter")


@pytest.fixture(scope="session")
def runs():
    return shipped_run
