import numpy as np
import pytest

from wmkit.core import TokenDistribution


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_distribution(rng, n, concentration=1.0):
    return TokenDistribution(rng.dirichlet(np.full(n, concentration)))


@pytest.fixture
def make_dist(rng):
    def _make(n, concentration=1.0):
        return random_distribution(rng, n, concentration)

    return _make
