import numpy as np
import pytest

from clustersmc.data import DataConfig, generate_clients

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_clients():
    cfg = DataConfig(K=6, sizes=(40, 30, 30, 30, 30, 20), input_dim=8, seed=3)
    return generate_clients(cfg)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
