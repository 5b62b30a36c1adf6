import pytest

_TITLES = {}
_OUTCOMES = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark:
            num, title = mark.args
            _TITLES[num] = title


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    num = mark.args[0]
    ok = _OUTCOMES.get(num, True)
    if report.when == "call":
        ok = ok and report.passed and not hasattr(report, "wasxfail")
    elif report.failed or (report.skipped and report.when == "setup"):
        ok = False
    _OUTCOMES[num] = ok


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_OUTCOMES):
        status = "PASS" if _OUTCOMES[num] else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {status}  {_TITLES.get(num, '')}")
