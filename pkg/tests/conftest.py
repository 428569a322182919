import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hypodiff.models import get_model

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

HO_TRUE = dict(D=4.0, gamma=0.5, sigma=0.5)
FHN_TRUE = dict(epsilon=0.1, gamma=1.5, alpha=0.8, sigma=0.3)
SIE_TRUE = dict(tau_E=0.5, tau_I=1.0, gbar_E=17.8, gbar_I=9.4, sigma_E=0.1, sigma_I=0.1)
TRUE = {"ho": HO_TRUE, "fhn": FHN_TRUE, "sie": SIE_TRUE}


@pytest.fixture
def ho():
    m = get_model("ho")
    return m, m.make_params(**HO_TRUE)


@pytest.fixture
def fhn():
    m = get_model("fhn")
    return m, m.make_params(**FHN_TRUE)


@pytest.fixture
def sie():
    m = get_model("sie")
    return m, m.make_params(**SIE_TRUE)


def interior_states(model_id, n, seed=0):
    """Random states in a box the shipped models visit."""
    rng = np.random.default_rng(seed)
    if model_id == "ho":
        return rng.uniform([-1, -2], [1, 2], size=(n, 2))
    if model_id == "fhn":
        return rng.uniform([-1.5, -1], [1.5, 1.5], size=(n, 2))
    return rng.uniform([-75, 5, 2], [-45, 30, 15], size=(n, 3))
