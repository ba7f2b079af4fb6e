import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_LINES = []


@pytest.fixture
def criterion():
    """Context manager that records one PASS/FAIL line for an acceptance criterion."""

    @contextmanager
    def record(number, title):
        info = {}
        try:
            yield info
        except BaseException:
            line = f"FAIL criterion {number}: {title} {info.get('detail', '')}".rstrip()
            _LINES.append((number, line))
            print(line)
            raise
        line = f"PASS criterion {number}: {title} {info.get('detail', '')}".rstrip()
        _LINES.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
