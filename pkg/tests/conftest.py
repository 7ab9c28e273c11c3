import numpy as np
import pytest
from hypothesis import settings

from aoijoint import disciplines as disc

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

DISCIPLINES = ("np", "ps", "sa")


@pytest.fixture
def sym2():
    """Two symmetric sources with lambda_i = 0.5 and mu = 1."""
    return disc.MultiSourceParams((0.5, 0.5), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


def random_params(rng, n_sources, lo=0.1, hi=3.0):
    lambdas = tuple(float(v) for v in rng.uniform(lo, hi, n_sources))
    return disc.MultiSourceParams(lambdas, float(rng.uniform(lo, hi)))
