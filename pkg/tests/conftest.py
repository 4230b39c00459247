import numpy as np
import pytest

from shadowmap import dynsys


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def logistic_pair():
    """Independent r=3.8 pair, 1000 steps."""
    return dynsys.simulate(dynsys.preset("table1-indep"), 1000, rng=3).values
