import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance criterion verdicts after the test summary.

    The acceptance tests print one line each, but default output capture
    swallows prints from passing tests; this makes the verdicts visible
    without -s.
    """
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None) if module else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
