_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        label = props.get("criterion", report.nodeid.split("::")[-1])
        _ACCEPTANCE[label] = (report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE):
        outcome, detail = _ACCEPTANCE[label]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        tr.write_line(f"{verdict}  {label}  {detail}".rstrip())
