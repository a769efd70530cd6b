import pytest

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def report():
    def _report(key, ok, detail):
        ACCEPTANCE[key] = (bool(ok), detail)
        print(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _report
