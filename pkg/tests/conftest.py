import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "status": "PASS", "detail": []})
    if report.skipped and report.when in ("setup", "call"):
        if entry["status"] == "PASS":
            entry["status"] = "SKIP"
        entry["detail"].append(str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else "skipped")
    elif report.failed:
        entry["status"] = "FAIL"
        entry["detail"].append(f"{item.name} failed during {report.when}")
    for key, value in item.user_properties:
        if key == "measured" and report.when == "call":
            entry["detail"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        e = _RESULTS[number]
        detail = "; ".join(d for d in e["detail"] if d)
        terminalreporter.write_line(f"{e['status']:4} [{number}] {e['title']}" + (f" ({detail})" if detail else ""))
