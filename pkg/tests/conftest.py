import pytest

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(criterion: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(passed), detail)
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
