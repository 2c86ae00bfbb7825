import numpy as np
import pytest

import hddsolve as hs
from hddsolve.fem import assemble_global, cell_patterns, local_load_matrix, local_stiffness
from hddsolve.mesh import interior_nodes

from conftest import FULL

# Hand integration of kappa * grad(b_i) . grad(b_j) over the right triangle
# with legs h along the axes (right-angle vertex first); kappa = 1.
RIGHT_TRIANGLE_STIFFNESS = 0.5 * np.array([
    [2.0, -1.0, -1.0],
    [-1.0, 1.0, 0.0],
    [-1.0, 0.0, 1.0],
])


def _barycentric(coords, p):
    t = np.vstack([np.ones(3), coords.T])
    return np.linalg.solve(t, np.array([1.0, p[0], p[1]]))


def _fd_gradients(coords, p, delta=1e-6):
    """Finite-difference gradients of the three hat functions at a point."""
    grads = np.empty((3, 2))
    for axis in range(2):
        dp = np.zeros(2)
        dp[axis] = delta
        grads[:, axis] = (_barycentric(coords, p + dp) - _barycentric(coords, p - dp)) / (2 * delta)
    return grads


def quadrature_stiffness(coords, kappa, k=4):
    """Independent oracle: midpoint rule over k^2 congruent sub-triangles with
    finite-difference hat gradients."""
    coords = np.asarray(coords, dtype=float)
    area = 0.5 * abs(
        (coords[1, 0] - coords[0, 0]) * (coords[2, 1] - coords[0, 1])
        - (coords[2, 0] - coords[0, 0]) * (coords[1, 1] - coords[0, 1])
    )
    sub_area = area / k**2
    acc = np.zeros((3, 3))
    for i in range(k):
        for j in range(k - i):
            lam = np.array([(i + 1 / 3) / k, (j + 1 / 3) / k, 0.0])
            lam[2] = 1.0 - lam[0] - lam[1]
            g = _fd_gradients(coords, lam @ coords)
            acc += sub_area * kappa * (g @ g.T)
            if i + j < k - 1:
                lam = np.array([(i + 2 / 3) / k, (j + 2 / 3) / k, 0.0])
                lam[2] = 1.0 - lam[0] - lam[1]
                g = _fd_gradients(coords, lam @ coords)
                acc += sub_area * kappa * (g @ g.T)
    return acc


def test_right_triangle_stiffness_frozen():
    h = 0.25
    coords = [(0.0, 0.0), (h, 0.0), (0.0, h)]
    assert np.allclose(local_stiffness(coords, 1.0), RIGHT_TRIANGLE_STIFFNESS, atol=1e-14)


def test_right_triangle_stiffness_vs_quadrature_oracle():
    h = 0.25
    coords = [(0.0, 0.0), (h, 0.0), (0.0, h)]
    oracle = quadrature_stiffness(coords, 1.0)
    assert np.allclose(oracle, RIGHT_TRIANGLE_STIFFNESS, atol=1e-6)
    assert np.allclose(local_stiffness(coords, 1.0), oracle, atol=1e-6)


def test_general_triangle_vs_quadrature_oracle():
    rng = np.random.default_rng(5)
    for _ in range(4):
        coords = rng.uniform(0, 1, (3, 2))
        if np.linalg.det(np.vstack([np.ones(3), coords.T])) < 0.1:
            continue
        kappa = rng.uniform(0.5, 3.0)
        assert np.allclose(
            local_stiffness(coords, kappa), quadrature_stiffness(coords, kappa), atol=1e-5
        )


def test_stiffness_linear_in_kappa():
    coords = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5)]
    assert np.allclose(local_stiffness(coords, 3.0), 3.0 * local_stiffness(coords, 1.0))


def test_stiffness_null_space_constants():
    rng = np.random.default_rng(11)
    for _ in range(5):
        coords = rng.uniform(0, 1, (3, 2))
        if np.linalg.det(np.vstack([np.ones(3), coords.T])) < 0.05:
            continue
        a = local_stiffness(coords, 2.0)
        assert np.allclose(a @ np.ones(3), 0.0, atol=1e-12)
        assert np.allclose(a, a.T)


def test_degenerate_triangle_raises():
    with pytest.raises(hs.GeometryError):
        local_stiffness([(0, 0), (1, 0), (2, 0)], 1.0)
    with pytest.raises(hs.GeometryError):
        local_load_matrix([(0, 0), (1, 0), (0.5, 0)])


def test_load_matrix_identity_scaled():
    coords = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5)]   # area 0.125
    f_loc = local_load_matrix(coords)
    assert np.allclose(f_loc, (0.125 / 3.0) * np.eye(3), atol=1e-15)
    # f == 1 on the triangle: every entry of the local rhs is area/3.
    assert np.allclose(f_loc @ np.ones(3), 0.125 / 3.0)


def test_lumped_load_equals_support_area_third():
    mesh = hs.build_mesh(2)
    _, f_glob = assemble_global(mesh, hs.CoefficientField.constant(mesh, 1.0))
    rhs = f_glob @ np.ones(mesh.n_nodes)
    for node in range(mesh.n_nodes):
        incident = np.flatnonzero((mesh.triangles == node).any(axis=1))
        support = mesh.triangle_areas[incident].sum()
        assert rhs[node] == pytest.approx(support / 3.0, abs=1e-15)


def test_global_assembly_level1_stencil():
    mesh = hs.build_mesh(1)
    a, f = assemble_global(mesh, hs.CoefficientField.constant(mesh, 1.0))
    center = interior_nodes(mesh, FULL)[0]
    assert a[center, center] == pytest.approx(4.0)
    assert np.allclose((f @ np.zeros(mesh.n_nodes)), 0.0)


def test_global_assembly_invariants(mesh3):
    kappa, _, _ = __import__("conftest").random_problem(mesh3, 3)
    a, _ = assemble_global(mesh3, kappa)
    dense = a.toarray()
    assert np.allclose(dense, dense.T, atol=1e-12)
    assert np.allclose(dense @ np.ones(mesh3.n_nodes), 0.0, atol=1e-12)
    assert np.linalg.eigvalsh(dense).min() > -1e-10
    a2, _ = assemble_global(mesh3, hs.CoefficientField(2.0 * kappa.values))
    assert np.allclose(2.0 * dense, a2.toarray())


def test_affine_solution_reproduced_exactly(mesh3):
    kappa = hs.CoefficientField.constant(mesh3, 1.0)
    bnd = hs.boundary_nodes(mesh3, FULL)
    g = mesh3.nodes[bnd, 0]
    u = hs.direct_solve(mesh3, kappa, np.zeros(mesh3.n_nodes), g)
    assert np.max(np.abs(u - mesh3.nodes[:, 0])) <= 1e-12


def test_coefficient_field_validation(mesh3):
    with pytest.raises(hs.ConfigError):
        hs.CoefficientField(np.array([1.0, -1.0]))
    with pytest.raises(hs.ConfigError):
        hs.CoefficientField(np.array([1.0, np.nan]))
    with pytest.raises(hs.ConfigError):
        assemble_global(mesh3, hs.CoefficientField(np.ones(3)))


def test_cell_patterns_match_per_triangle_assembly():
    h = 0.125
    p1, p2, load = cell_patterns(h)
    tri1 = np.array([(0, 0), (h, 0), (h, h)], dtype=float)
    tri2 = np.array([(0, 0), (h, h), (0, h)], dtype=float)
    a1 = local_stiffness(tri1, 1.0)
    full = np.zeros((4, 4))
    full[np.ix_([0, 1, 3], [0, 1, 3])] = a1
    assert np.allclose(p1, full)
    assert np.allclose(np.diag([2, 1, 1, 2]) * h * h / 6.0, np.diag(load))
    assert np.allclose(local_stiffness(tri2, 1.0) @ np.ones(3), 0.0, atol=1e-14)
