import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from ivdeepc.lti_sim import NoiseSpec, benchmark_system, simulate, white_noise  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def bench():
    return benchmark_system()


def excite(sys, T, var=0.0, seed=0, x0=None):
    u = white_noise(NoiseSpec(1.0, seed, 1), T, sys.r)
    e = white_noise(NoiseSpec(var, seed, 2), T, sys.l)
    return simulate(sys, u, e, x0=x0)


@pytest.fixture(scope="session")
def clean_traj(bench):
    return excite(bench, 800)


@pytest.fixture(scope="session")
def noisy_traj(bench):
    return excite(bench, 800, var=0.1 ** 2)
