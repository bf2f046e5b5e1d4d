import pytest

# Outcomes of the acceptance tests, keyed by criterion number.
_CRITERIA: dict[int, dict] = {}


def _criterion(item) -> tuple[int, str] | None:
    marker = item.get_closest_marker("criterion")
    return None if marker is None else (int(marker.args[0]), str(marker.args[1]))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    found = _criterion(item)
    if found is None or report.when != "call" and not report.failed:
        return
    number, title = found
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    if report.failed:
        entry["ok"] = False
    entry["details"].extend(v for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] else "FAIL"
        line = f"criterion {number:2d}: {status}  {entry['title']}"
        details = entry["details"]
        if len(details) > 4:
            details = details[:3] + [f"+{len(details) - 3} more"]
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
