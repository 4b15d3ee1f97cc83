import numpy as np
import pytest

from ucc.bags import InstancePool
from ucc.synthetic import SyntheticSpec, gen_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_pool() -> InstancePool:
    return gen_synthetic(SyntheticSpec(n_classes=4, dim=8, per_class=60, seed=3))
