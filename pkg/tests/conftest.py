import numpy as np
import pytest
from hypothesis import settings

from lossy_pdc.config import PhysicsConfig
from lossy_pdc.inversion import ForwardModel, calibrate_gamma
from lossy_pdc.physics import reference_setup
from lossy_pdc.propagation import IntegratorConfig

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")

SMALL_N = 24
SMALL_STEPS = 256


@pytest.fixture(scope="session")
def small_gamma():
    """Gamma giving the reference photon number on the small grid."""
    return calibrate_gamma(PhysicsConfig().with_grid(SMALL_N), IntegratorConfig(SMALL_STEPS), 2.1e-4)


@pytest.fixture(scope="session")
def make_small_setup(small_gamma):
    def make(alpha_s=0.0, alpha_i=0.0, gamma=None, n_points=SMALL_N):
        return reference_setup(gamma=small_gamma if gamma is None else gamma,
                              alpha_s_db_cm=alpha_s, alpha_i_db_cm=alpha_i, n_points=n_points)
    return make


@pytest.fixture(scope="session")
def cheap_model():
    phys = PhysicsConfig().with_grid(32)
    integ = IntegratorConfig(64)
    return ForwardModel(phys, integ, calibrate_gamma(phys, integ, 2.1e-4))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
