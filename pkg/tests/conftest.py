import numpy as np
import pytest

from nfisac.config import desk_config
from nfisac.experiments import gen_scenario

ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--profile", choices=("desk", "paper"), default="desk",
                     help="'paper' also runs the hours-long full-scale acceptance check")


@pytest.fixture(scope="session")
def profile(request):
    return request.config.getoption("--profile")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk():
    return desk_config()


@pytest.fixture(scope="session")
def desk_scenario(desk):
    return gen_scenario(desk, 7)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
