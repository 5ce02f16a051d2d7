"""Shared pytest wiring.

The acceptance tests push one "ACCEPTANCE n <name>: PASS/FAIL (...)" line
each into `ACCEPTANCE_LINES`; the summary hook replays them at the end of
the run so the verdicts are visible even when capture swallows stdout.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
