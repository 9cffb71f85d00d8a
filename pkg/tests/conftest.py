"""Shared pytest hooks: a one-line-per-criterion summary of the acceptance suite."""
import pytest

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def acceptance():
    """``record(number, ok, title, detail)`` stores one criterion outcome for the summary."""

    def record(number: int, ok: bool, title: str, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(ok), title, detail)
        return bool(ok)

    return record
