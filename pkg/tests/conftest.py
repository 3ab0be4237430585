"""Acceptance summary: one PASS/FAIL line per criterion after the test run."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    failed = report.failed or (report.when == "call" and report.outcome != "passed")
    if report.when == "call" or failed:
        detail = dict(item.user_properties).get("detail", "")
        prev = _RESULTS.get(label)
        status = "FAIL" if failed else ("SKIP" if report.skipped else "PASS")
        if prev is None or prev[0] == "PASS":
            _RESULTS[label] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")

    def key(label):
        num = "".join(ch for ch in label if ch.isdigit())
        return (int(num) if num else 0, label)

    for label in sorted(_RESULTS, key=key):
        status, detail = _RESULTS[label]
        terminalreporter.write_line(f"criterion {label}: {status}" + (f"  [{detail}]" if detail else ""))
