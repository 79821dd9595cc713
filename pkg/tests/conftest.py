import numpy as np
import pytest

# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def report(number, passed, detail):
    line = "criterion %2d: %s  %s" % (number, passed, detail)
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
