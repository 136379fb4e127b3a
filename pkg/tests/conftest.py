"""Echo the acceptance verdict lines after the usual pytest summary."""

from helpers import ACCEPTANCE_VERDICTS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_VERDICTS):
        terminalreporter.write_line(line)
