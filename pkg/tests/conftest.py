import numpy as np
import pytest

from reachlab.model import load_model


@pytest.fixture(scope="session")
def planar2():
    return load_model("planar2")


@pytest.fixture(scope="session")
def spatial6():
    return load_model("spatial6")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
