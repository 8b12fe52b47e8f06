"""Collects the one-line verdicts of the acceptance suite and prints them
at the end of the session (they would otherwise be captured)."""

VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in VERDICTS:
        terminalreporter.write_line(line)
