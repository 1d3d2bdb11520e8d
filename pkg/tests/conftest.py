import re

_CRITERION = re.compile(r"test_acceptance\.py::test_c(\d\d)_")


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m or (rep.when != "call" and outcome != "error"):
                continue
            measured = dict(getattr(rep, "user_properties", [])).get("measured", "")
            rows[int(m.group(1))] = ("PASS" if outcome == "passed" else "FAIL", rep.nodeid.split("::")[-1], measured)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rows):
        status, name, measured = rows[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {name}  {measured}")
