import pytest

_VERDICTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed_early = report.when == "setup" and not report.passed
    if report.when == "call" or failed_early:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _VERDICTS[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        status, title, detail = _VERDICTS[number]
        terminalreporter.write_line(f"{status} {number}. {title}" + (f" ({detail})" if detail else ""))
