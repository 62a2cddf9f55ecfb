import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# path simulations make individual examples slow and timing-noisy; the
# default deadline would flake under load
settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def benchmark():
    from enkbf.models import damped_rotation

    return damped_rotation()


@pytest.fixture(scope="session")
def prior():
    from enkbf.estimators import GaussianPosterior

    return GaussianPosterior(mu=0.0, sigma=4.0)


@pytest.fixture(scope="session")
def short_path(benchmark):
    from enkbf.paths import simulate_reference

    return simulate_reference(benchmark, T=3.0, delta_tau=1e-3, seed=1234)
