"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""
import pytest

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    passed = report.passed and report.when == "call"
    if number not in _VERDICTS or not passed:
        _VERDICTS[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, passed, detail = _VERDICTS[number]
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
