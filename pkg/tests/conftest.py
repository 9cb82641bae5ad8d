import numpy as np
import pytest

from envavg.measures import Measure, torus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def atoms(rng):
    """Random 10-atom probability measure on the unit torus."""
    w = rng.uniform(0.2, 1.0, 10)
    return Measure.atomic(rng.uniform(0, 1, 10), w / w.sum(), torus())
