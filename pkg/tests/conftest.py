import pytest

_LINES = []


@pytest.fixture(scope="session")
def record():
    """``record(n, name, ok, detail)`` adds a line to the acceptance summary."""

    def add(n, name, ok, detail):
        _LINES.append((n, f"{'PASS' if ok else 'FAIL'} criterion {n:>2} {name}: {detail}"))
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)
