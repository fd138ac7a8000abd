import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# numba compilation on first kernel use makes per-example deadlines meaningless
settings.register_profile(
    "pkg",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("pkg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
