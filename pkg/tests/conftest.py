import pytest

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the line is echoed in the terminal summary."""

    def record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {number:>2}. {title}: {detail}")
