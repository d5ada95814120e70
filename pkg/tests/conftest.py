import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from swiptcran.sysmodel import SystemConfig, generate_channels

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def config():
    return SystemConfig()


@pytest.fixture(scope="session")
def chan(config):
    return generate_channels(config, 42)


def random_w(rng, chan, scale=1.0):
    shape = (chan.L, chan.K, chan.M)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def random_v(rng, chan, scale=1.0):
    shape = (chan.L, chan.N)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@pytest.fixture
def rng():
    return np.random.default_rng(7)
