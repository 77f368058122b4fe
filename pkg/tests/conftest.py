import numpy as np
import pytest

from aerobat.config import load_config
from aerobat.dynamics import MavParams


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def params(cfg):
    return MavParams.from_config(cfg["dynamics"])


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
