"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import re


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py" not in rep.nodeid:
                continue
            m = re.search(r"test_criterion_(\d+)_(\w+)", rep.nodeid)
            if not m:
                continue
            props = dict(rep.user_properties)
            label = props.get("label", m.group(2).replace("_", " "))
            detail = props.get("detail", "")
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((int(m.group(1)), f"{status} criterion {m.group(1)}: {label}" + (f" ({detail})" if detail else "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
