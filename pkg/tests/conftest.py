import numpy as np
import pytest

from wlopt import plant
from wlopt.config import STABLE_ENGINE


@pytest.fixture(scope="session")
def params():
    return plant.WLParams()


@pytest.fixture(scope="session")
def stable_weights():
    return STABLE_ENGINE


@pytest.fixture
def valid_state():
    return np.array([0.5, 0.35, -0.4, 0.05, 0.1, 0.1, 0.03, 0.1, 0.2, 0.1, 0.1])


def random_states(rng, n):
    """States inside all plant guards (normalized units)."""
    lo = np.array([0.25, 0.05, -0.45, -0.5, -1.0, -1.0, -0.2, -0.5, -0.8, -0.5, -0.8])
    hi = np.array([0.95, 1.20, 0.90, 0.5, 1.0, 1.0, 0.2, 0.5, 0.8, 0.5, 0.8])
    return rng.uniform(lo, hi, (n, 11))
