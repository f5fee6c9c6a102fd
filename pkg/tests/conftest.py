import re

_ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_a(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        status = {"passed": "PASS", "failed": "FAIL"}.get(report.outcome, "SKIP")
        _ACCEPTANCE[key] = (m.group(2).replace("_", " "), status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        name, status, detail = _ACCEPTANCE[key]
        line = f"A{key:<2} {status}  {name}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
