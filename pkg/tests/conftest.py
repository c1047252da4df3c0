import pytest

_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Call with (number, passed, detail); lines are printed in the terminal summary."""

    def report(number, passed, detail):
        _LINES.append((number, passed, detail))
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
