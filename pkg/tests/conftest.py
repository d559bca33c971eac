import pytest

_LINES = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion.

    Usage: ``criterion(5, "toy example", checks)`` with ``checks`` a list of
    (description, passed) pairs; the line is printed immediately and again in
    the terminal summary, and the test fails if any check failed.
    """
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number, title, checks):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{'ok' if passed else 'FAILED'}: {text}" for text, passed in checks)
        line = f"criterion {number} {'PASS' if ok else 'FAIL'} - {title} | {detail}"
        _LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
