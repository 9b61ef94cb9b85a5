import numpy as np
import pytest

from brwlab.rng import stream


@pytest.fixture
def rng(request) -> np.random.Generator:
    # One reproducible stream per test, keyed by the test's node id.
    return stream(12345, request.node.nodeid)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    def _report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
