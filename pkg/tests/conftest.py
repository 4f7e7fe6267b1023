import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    """Collects one verdict line per acceptance criterion for the summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
