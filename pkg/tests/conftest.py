import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; shown in the terminal summary."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
