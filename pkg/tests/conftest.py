import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def two_cell():
    """Unit square split into two 0.5 x 1 cells: m_sigma = 1, d = 0.5."""
    from sac_fv.mesh import build_uniform_grid
    return build_uniform_grid(2, (1.0, 1.0), (2, 1))
