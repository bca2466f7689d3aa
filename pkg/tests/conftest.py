"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call" and outcome != "error":
                continue
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props:
                rows.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL",
                             props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, verdict, detail in sorted(rows):
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {detail}")
