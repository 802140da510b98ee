"""Shared pytest hooks: collects the acceptance criteria's pass/fail
lines and prints them in the terminal summary of every run."""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.line(line)
