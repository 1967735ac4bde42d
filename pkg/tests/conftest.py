"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import pytest

_OUTCOMES: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion label")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    if report.when == "call" or report.failed or report.skipped:
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        previous = _OUTCOMES.get(label, ("PASS", ""))[0]
        if previous == "FAIL":
            status = "FAIL"
        _OUTCOMES[label] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_OUTCOMES, key=lambda s: int(s.split()[0][2:])):
        status, detail = _OUTCOMES[label]
        terminalreporter.write_line(f"{status} {label}" + (f"  [{detail}]" if detail else ""))
