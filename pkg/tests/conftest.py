import pytest

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "seconds": 0.0, "detail": ""})
    if rep.failed or rep.skipped:
        entry["passed"] = False
    if rep.when == "call":
        entry["seconds"] = rep.duration
        entry["detail"] = "; ".join(str(v) for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["passed"] else "FAIL"
        line = f"{status}  criterion {number:2d}  {e['title']}  ({e['seconds']:.1f} s)"
        if e["detail"]:
            line += f"  {e['detail']}"
        terminalreporter.write_line(line)
