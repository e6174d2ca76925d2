import numpy as np
import pytest

from vidstyle.features import build_extractor


@pytest.fixture(scope="session")
def extractor():
    return build_extractor()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.pytest_acceptance_lines():
        terminalreporter.write_line(line)
