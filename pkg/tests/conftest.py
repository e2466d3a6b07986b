"""Shared pytest wiring for the acceptance gate's per-criterion report."""

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    # Re-emit the verdict lines after the run so capture mode can't hide them.
    if VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in VERDICTS:
            terminalreporter.write_line(line)
