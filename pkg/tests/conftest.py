import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qlut import make_uniform_midriser
from qlut.signals import ScenarioModel, ToneParams, known_prior

settings.register_profile(
    "qlut",
    deadline=None,
    max_examples=int(os.environ.get("QLUT_HYPOTHESIS_EXAMPLES", "40")),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("qlut")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion")


def tone_scenario(bits=3, N=2, sigma_rel=0.16, frequency=np.pi / 10):
    """Default tone scenario with known amplitude and frequency."""
    q = make_uniform_midriser(bits)
    d = ToneParams(1 - q.step / 2, frequency, 0.0)
    sigma = sigma_rel * q.step
    return ScenarioModel(d, q, N, known_prior(d, sigma), sigma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def q3():
    return make_uniform_midriser(3)
