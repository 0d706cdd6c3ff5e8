import numpy as np
import pytest

from modeforge.spectral import IQFrame


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_complex(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@pytest.fixture
def random_frame(rng):
    return IQFrame(random_complex(rng, 256))


@pytest.fixture(scope="session")
def small_fleet():
    from modeforge.data import gen_fleet
    return gen_fleet(4, 20, 128, 20.0, 7)
