import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
