import numpy as np
import pytest

from vpme.torus_field import ScalarField, TorusGrid


@pytest.fixture
def grid64():
    return TorusGrid(d=2, n=64)


@pytest.fixture
def grid32_3d():
    return TorusGrid(d=3, n=32)


def node_mesh(grid):
    """Node coordinate arrays, one per axis, broadcastable to grid.shape."""
    c = grid.axis_coordinates()
    return np.meshgrid(*(c,) * grid.d, indexing="ij", sparse=True)


def single_mode_density(grid, amplitude=0.3, axis=0):
    """rho = 1 + amplitude * cos(2 pi x_axis), unit mass by construction."""
    x = node_mesh(grid)[axis]
    return ScalarField(grid, 1.0 + amplitude * np.cos(2 * np.pi * x)
                       + np.zeros(grid.shape))
