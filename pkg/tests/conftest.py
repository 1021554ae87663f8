import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rhotomo.geometry import ScanGeometry, uniform_angles

settings.register_profile(
    "rhotomo", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("rhotomo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geom():
    """16^3 volume, 8 views over a half turn, detector covering the box."""
    return ScanGeometry.covering((16, 16, 16), (1.0, 1.0, 1.0), 60.0, 90.0, uniform_angles(8))
