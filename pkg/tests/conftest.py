import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance verdicts, printed together at the end of the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def record_acceptance():
    """Call as ``record(n, ok, detail)``; the line is printed in the summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} {number}: {detail}")

    return record
