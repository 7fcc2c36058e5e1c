import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from selfdiff.potentials import QuarticRadial
from selfdiff.rotation2d import RadialDensity, default_grid

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# m2 close to 0.40: subcritical at every angle
QUARTIC = QuarticRadial(a=1.0, b=0.0, c=1.0)
# m2 close to 3.19: supercritical at theta = pi, circling for |cos theta| > 0.31
FLAT = QuarticRadial(a=1.0 / 64.0, b=0.0, c=1.0)


@pytest.fixture(scope="session")
def quartic():
    return QUARTIC


@pytest.fixture(scope="session")
def flat():
    return FLAT


@pytest.fixture(scope="session")
def quartic_grid():
    return default_grid(QUARTIC)


@pytest.fixture(scope="session")
def flat_grid():
    return default_grid(FLAT)


@pytest.fixture(scope="session")
def quartic_rd(quartic_grid):
    return RadialDensity.matching_grid(QUARTIC, quartic_grid)


@pytest.fixture(scope="session")
def flat_rd(flat_grid):
    return RadialDensity.matching_grid(FLAT, flat_grid)


def tilted(grid, V, center, width=1.0):
    """exp(-2V - |x - center|^2 / 2 width^2), normalized on the grid."""
    from selfdiff.measures import GridMeasure2D

    X = grid.points
    logd = -2.0 * V.value(X) - np.sum((X - np.asarray(center)) ** 2, -1) / (2 * width**2)
    return GridMeasure2D.from_log_density(grid, logd)[0]
