import pytest

from segreid import tensor as T

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.fixture(autouse=True)
def _float64_default():
    T.set_precision("float64")
    yield
    T.set_precision("float64")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = marker.args
    details = ", ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[number] = ("PASS" if report.passed else "FAIL", title, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, details = _CRITERIA[number]
        line = f"{status} criterion {number:2d}: {title}"
        terminalreporter.write_line(f"{line} ({details})" if details else line)
