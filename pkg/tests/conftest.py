"""Shared pytest wiring: verdict lines for the acceptance suite.

test_acceptance.py registers one line per criterion via record_verdict;
printing them from the terminal-summary hook keeps them visible without
-s, since hook output bypasses pytest's capture.
"""

from __future__ import annotations

_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in _VERDICTS:
        terminalreporter.write_line(line)
