import numpy as np
import pytest

from tracelab.functional import NodalField, Params
from tracelab.mesh import build_mesh
from tracelab.symmetry import enumerate_group, minimal_orbital_set


@pytest.fixture(scope="session")
def disk_k3():
    return build_mesh(2, 3, refinement=1)


@pytest.fixture(scope="session")
def disk_k3_fine():
    return build_mesh(2, 3, refinement=2)


@pytest.fixture(scope="session")
def ball_k3():
    return build_mesh(3, 3, refinement=0)


@pytest.fixture(scope="session")
def ball_k3_mid():
    return build_mesh(3, 3, refinement=1)


def random_field(mesh, seed=0):
    rng = np.random.default_rng(seed)
    return NodalField(mesh=mesh, coefficients=rng.standard_normal(mesh.num_vertices))
