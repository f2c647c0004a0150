import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mask(rng, n, d, p=0.3, keep_one=True):
    mask = rng.random((n, d)) >= p
    if keep_one:
        empty = ~mask.any(axis=1)
        mask[empty, rng.integers(0, d, size=empty.sum())] = True
    return mask
