import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from subwave.models import register_builtin  # noqa: E402


@pytest.fixture(scope="session")
def heis():
    return register_builtin("heisenberg")


@pytest.fixture(scope="session")
def grushin():
    return register_builtin("grushin")


@pytest.fixture(scope="session")
def euclid2():
    return register_builtin("euclidean(2)")


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance as acc
    except ImportError:
        return
    if not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.report_line(num))
