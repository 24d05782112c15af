import os
import warnings

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_pilot_floor_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*below the recommended floor.*")
        yield
