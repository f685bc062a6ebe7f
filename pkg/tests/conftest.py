import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        notes = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _RESULTS.setdefault(number, []).append((item.name, title, status, notes, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        for name, title, status, notes, duration in _RESULTS[number]:
            line = f"[{status}] criterion {number:>2}: {title} ({duration:.1f}s)"
            if notes:
                line += f" | {notes}"
            terminalreporter.write_line(line)
