import numpy as np
import pytest

from chimera2d.fespace import build_fe_system
from chimera2d.mesh import AnnulusSpec, build_annular_submesh, build_background_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def unit_cell_system():
    """A single bilinear cell on [0, 1]^2."""
    return build_fe_system(build_background_mesh((0.0, 0.0, 1.0, 1.0), 1, 1))


@pytest.fixture
def square_system():
    """4 x 4 uniform grid on the unit square."""
    return build_fe_system(build_background_mesh((0.0, 0.0, 1.0, 1.0), 4, 4))


@pytest.fixture
def annulus_system():
    return build_fe_system(
        build_annular_submesh(AnnulusSpec(1.0, 2.0, n_theta=32, n_rings=6))
    )
