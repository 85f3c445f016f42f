import pytest

# criterion number -> "PASS ..." / "FAIL ..." / "SKIP ..." line, filled by test_acceptance
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_report():
    def report(key, passed, detail):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        line = f"{status} criterion {key}: {detail}"
        ACCEPTANCE_LINES[key] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=str):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
