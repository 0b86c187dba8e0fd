import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)([a-z]?)_(\w+)")
_results = {}


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    key = (int(match.group(1)), match.group(2))
    if report.when == "setup" and report.failed or report.when == "call":
        detail = dict(report.user_properties).get("detail", "")
        _results[key] = (match.group(3).replace("_", " "), report.passed, report.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for (num, part), (title, passed, duration, detail) in sorted(_results.items()):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {num}{part} {title}: {status} ({duration:.1f}s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
