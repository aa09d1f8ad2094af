"""Shared pytest hooks: print one line per acceptance criterion at the end."""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for outcome, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL"),
                           ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            if outcome != "skipped" and getattr(report, "when", "call") != "call":
                continue
            rows.append((nodeid, label))
    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for nodeid, label in sorted(rows):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{label}  {name}")
