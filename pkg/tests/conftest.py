import numpy as np
import pytest

from kinklab.grid import GridSpec


@pytest.fixture(scope="session")
def grid20() -> GridSpec:
    """Standard box for profile tests: wide enough that tanh-type tails
    are flat to well below 1e-8 at the boundary."""
    return GridSpec(L=20.0, N=1024)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20260818)
