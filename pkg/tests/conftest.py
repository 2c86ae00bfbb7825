import numpy as np
import pytest

import hddsolve as hs

FULL = hs.Rect(0.0, 1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def mesh3():
    return hs.build_mesh(3)


@pytest.fixture(scope="session")
def tree3(mesh3):
    return hs.build_tree(mesh3)


def random_problem(mesh, seed, kappa_range=(0.1, 10.0)):
    """Seeded random coefficient, right-hand side, and boundary data."""
    rng = np.random.default_rng(seed)
    kappa = hs.CoefficientField(rng.uniform(*kappa_range, mesh.n_triangles))
    f = rng.standard_normal(mesh.n_nodes)
    g = rng.standard_normal(hs.boundary_nodes(mesh, FULL).size)
    return kappa, f, g
