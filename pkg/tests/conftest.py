import random
import string

import pytest

from vdsdm import scheme

UNIVERSE = list(string.ascii_lowercase[:20])


@pytest.fixture
def rng():
    return random.Random(20240601)


@pytest.fixture(scope="session")
def authority():
    """(pk, msk) over a 20-attribute universe a..t, shared across tests."""
    return scheme.setup(UNIVERSE, random.Random(7))


@pytest.fixture(scope="session")
def pk(authority):
    return authority[0]


@pytest.fixture(scope="session")
def msk(authority):
    return authority[1]


# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
