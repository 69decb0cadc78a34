import numpy as np
import pytest
from hypothesis import strategies as st

from diffwitness.se3 import Pose, Twist, random_rotation


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


seeds = st.integers(min_value=0, max_value=2**32 - 1)


def pose_from_seed(seed, scale=1.0):
    r = np.random.default_rng(seed)
    return Pose(random_rotation(r), r.normal(size=3) * scale)


def twist_from_seed(seed, scale=1.0):
    r = np.random.default_rng(seed)
    return Twist(r.normal(size=3) * scale, r.normal(size=3) * scale)
