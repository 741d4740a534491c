import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bvwave.types import Grid, ProblemData, SpaceTimeField
from bvwave.manufactured import box_indicator

settings.register_profile("bvwave", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bvwave")


def random_problem(grid, m=1, alpha=0.5, seed=0, initial=False):
    """Problem with a random smooth-ish desired state and ``m`` box controls."""
    rng = np.random.default_rng(seed)
    x = grid.coords
    centers = np.linspace(-0.5, 0.5, m) if m > 1 else [0.0]
    half = 0.3 if m == 1 else 0.4 / m
    g = np.stack([box_indicator(x, half, np.full(grid.dim, c), scale=1.0 + j)
                  for j, c in enumerate(centers)])
    yd = rng.standard_normal((grid.nt, grid.n_nodes))
    yd[:, grid.boundary_mask] = 0.0
    kw = {}
    if initial:
        kw["y0"] = rng.standard_normal(grid.n_nodes) * ~grid.boundary_mask
        kw["y1"] = rng.standard_normal(grid.n_nodes) * ~grid.boundary_mask
    return ProblemData(grid, g, [alpha] * m, SpaceTimeField(yd, grid), **kw)


@pytest.fixture
def grid1d():
    return Grid(1, -1.0, 1.0, 17, 2.0, 33)


@pytest.fixture
def grid2d():
    return Grid(2, -1.0, 1.0, 9, 1.0, 17)
