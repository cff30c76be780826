import logging

import pytest

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}")
