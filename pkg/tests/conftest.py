from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Append one PASS/FAIL line to the end-of-run acceptance summary."""
    def record(line: str) -> None:
        _LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
