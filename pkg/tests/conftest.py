import pytest

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the flag for asserting."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
        print(line)
        request.config.stash[_VERDICTS].append((number, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash[_VERDICTS])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
