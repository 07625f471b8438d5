"""Shared test helpers: acceptance reporting visible in the run summary."""

ACCEPTANCE_LINES = []


def record_criterion(num, name, ok, detail):
    """Format, remember and return one acceptance pass/fail line."""
    line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
