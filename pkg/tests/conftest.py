"""Shared pytest wiring for the test suite.

The acceptance tests append one pass/fail line per criterion to
``acceptance_lines``; printing them from a terminal-summary hook keeps them
visible in a plain verbose run, where output capture would otherwise swallow
anything written during the tests themselves.
"""

from __future__ import annotations

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
