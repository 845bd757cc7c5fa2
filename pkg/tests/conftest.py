import warnings

import numpy as np
import pytest

from spatialqkd.analytic import UnusableModesWarning


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_unusable_modes():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnusableModesWarning)
        yield
