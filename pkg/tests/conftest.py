import pytest

RESULTS: dict = {}


@pytest.fixture
def record():
    def _record(num, name, ok, detail):
        RESULTS[num] = (name, ok, detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        name, ok, detail = RESULTS[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {name}: {detail}")
