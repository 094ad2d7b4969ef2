import pytest
from hypothesis import HealthCheck, settings

from gksl_scattering import ModelParams

settings.register_profile(
    "default",
    deadline=None,
    max_examples=30,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def decay_params():
    return ModelParams(lam=1.0, m_s=3.0, m_e=1.0)


@pytest.fixture
def pair_params():
    return ModelParams(lam=0.2, m_s=0.02, m_e=1.0)
