import numpy as np
import pytest

from nodediscovery.simulate import TransmissionParams


@pytest.fixture
def params():
    return TransmissionParams(0.067, 0.033)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical reproduction")
