import pytest

# Filled by test_acceptance.report(); printed once at the end of the run.
CRITERIA_LINES = {}


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA_LINES):
        terminalreporter.write_line(CRITERIA_LINES[key])
