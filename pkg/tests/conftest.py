import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance_line():
    """Call with (criterion number, title, passed, detail) to register the criterion's summary line."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        verdict = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES[number] = f"[{verdict}] criterion {number:>2} {title}" + (f": {detail}" if detail else "")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
