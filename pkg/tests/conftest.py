import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(autouse=True)
def _quiet_clamp_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="speed outside the map grid")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
