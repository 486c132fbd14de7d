"""Shared pytest plumbing.

The acceptance suite records one verdict line per criterion; the
terminal-summary hook below replays those lines at the end of the run so
they stay visible even under output capture.
"""

import pytest

ACCEPTANCE_KEY = pytest.StashKey()


@pytest.fixture(scope="session")
def acceptance(request):
    """Returns a recorder: acceptance(num, title, ok, detail) -> asserts ok."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(num, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {num} [{title}]: {status}"
        if detail:
            line += f" ({detail})"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
