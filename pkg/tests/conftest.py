"""Shared pytest wiring.

Collects the one-line verdicts emitted by the acceptance tests and echoes
them after the run summary, so they are visible without ``-s``.
"""

import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Append-only list of ``criterion N: PASS|FAIL (...)`` lines."""
    return request.config.acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
