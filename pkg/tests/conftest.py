import pytest

_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_KEY] = []


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash[_KEY]

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        print(line)
        lines.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
