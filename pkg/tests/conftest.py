import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion."""

    def record(criterion, ok, detail):
        line = f"criterion {criterion:<6s} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
