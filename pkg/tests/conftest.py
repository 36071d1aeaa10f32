"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line per criterion."""

from collections import OrderedDict

import pytest

_outcomes: "OrderedDict[int, dict]" = OrderedDict()


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    rec = _outcomes.setdefault(number, {"title": title, "passed": True, "seen": False})
    if report.when == "call" or report.failed:
        rec["seen"] = True
        rec["passed"] = rec["passed"] and report.passed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        rec = _outcomes[number]
        verdict = "PASS" if rec["seen"] and rec["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {rec['title']}")
