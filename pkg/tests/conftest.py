import numpy as np
import pytest

from crowdflow.grid import Rect, rasterize_geometry


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)


def open_box(x0, x1, y0, y1, dx, exits=()):
    """Obstacle-free room; exits given as Rects."""
    return rasterize_geometry(Rect(x0, x1, y0, y1), [], list(exits), dx)


def uniform_nu(geometry, vec=(1.0, 0.0)):
    nu = np.zeros(geometry.grid.shape + (2,))
    nu[geometry.free | geometry.exit] = vec
    return nu
