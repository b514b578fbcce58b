import pytest

_CRITERIA: dict = {}


@pytest.fixture
def record_criterion():
    """Store a one-line verdict for an acceptance criterion; printed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[key])
