import re

import pytest
from hypothesis import settings

settings.register_profile("repo", derandomize=True, deadline=None)
settings.load_profile("repo")

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        state = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _criteria.get(n)
        # any failure wins, then pass, then skip
        rank = {"FAIL": 2, "PASS": 1, "SKIP": 0}
        if prev is None or rank[state] > rank[prev[0]]:
            doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
            _criteria[n] = (state, doc)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        state, doc = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2}: {state}  {doc}")
