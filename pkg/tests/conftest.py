import pytest

from viscoreg.maze import bundled_maze


@pytest.fixture(scope="session")
def empty5():
    return bundled_maze("empty5")


@pytest.fixture(scope="session")
def maze10():
    return bundled_maze("maze10")


@pytest.fixture(scope="session")
def arena20():
    return bundled_maze("arena20")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
