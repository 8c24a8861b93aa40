import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from cvqkd.verification import RandomStateSpec, draw

# derandomized so that the suite is reproducible run to run
settings.register_profile(
    "repro",
    derandomize=True,
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repro")


def random_cm(n_modes, seed, nu_max=4.0):
    return draw(RandomStateSpec(n_modes, nu_max, seed), 0)


seeds = st.integers(min_value=0, max_value=2**31 - 1)
transmittances = st.floats(min_value=0.01, max_value=1.0)
noises = st.floats(min_value=0.0, max_value=0.5)
variances = st.floats(min_value=1.0, max_value=60.0)
betas = st.floats(min_value=0.0, max_value=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
