"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

ACCEPTANCE_FILE = "test_acceptance.py"
_results: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _results[report.nodeid.split("::")[-1]] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_results):
        status, detail = _results[name]
        terminalreporter.write_line(f"{status}  {name}  {detail}")
