import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``passed`` so tests can assert on it."""

    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"{'PASS' if passed else 'FAIL'}  {number:>2}. {name}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
