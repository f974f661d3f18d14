import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

N_CASES = 100


def random_grid(rng, max_side=4):
    return int(rng.integers(1, max_side + 1)), int(rng.integers(1, max_side + 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
