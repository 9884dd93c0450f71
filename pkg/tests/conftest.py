import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from egogen import scenarios

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def kiwi_source():
    """(demo, scripted truth, scene) for the single-object pick-and-place task."""
    return scenarios.make_source("kiwi", 0)


@pytest.fixture(scope="session")
def small_kiwi_source():
    """Low-resolution variant, cheap enough for batch runs."""
    return scenarios.make_source("kiwi", 0, K=scenarios.wrist_intrinsics(16, 12, 15.0))
