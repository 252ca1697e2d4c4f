"""Collects one PASS/FAIL/SKIP line per acceptance criterion and prints them at the end."""
import pytest

RESULTS = []


@pytest.fixture(scope="session")
def record():
    def _record(name, status, detail=""):
        line = f"{status:4s}  {name}: {detail}"
        RESULTS.append(line)
        print(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
