import numpy as np
import pytest

import hddsolve as hs
from hddsolve.mesh import dump_mesh, region_nodes, triangles_in_region

from conftest import FULL


def test_level1_counts():
    mesh = hs.build_mesh(1)
    assert mesh.m == 3
    assert mesh.n_nodes == 9
    assert mesh.n_triangles == 8
    assert np.allclose(mesh.triangle_areas, 0.125)


def test_level2_counts():
    mesh = hs.build_mesh(2)
    assert mesh.m == 5
    assert mesh.n_nodes == 25
    assert mesh.n_triangles == 32


def test_total_area_is_one():
    mesh = hs.build_mesh(3)
    assert abs(mesh.triangle_areas.sum() - 1.0) <= 1e-14


def test_triangles_positively_oriented_and_valid():
    mesh = hs.build_mesh(2)
    xy = mesh.nodes[mesh.triangles]
    cross = (xy[:, 1, 0] - xy[:, 0, 0]) * (xy[:, 2, 1] - xy[:, 0, 1]) \
        - (xy[:, 2, 0] - xy[:, 0, 0]) * (xy[:, 1, 1] - xy[:, 0, 1])
    assert (cross > 0).all()
    assert np.allclose(0.5 * cross, mesh.triangle_areas)
    for tri in mesh.triangles:
        assert len(set(tri)) == 3
        assert tri.max() < mesh.n_nodes


def test_node_order_lexicographic_by_y_then_x():
    mesh = hs.build_mesh(2)
    keys = mesh.nodes[:, 1] * 10 + mesh.nodes[:, 0]
    assert (np.diff(keys) > 0).all()


@pytest.mark.parametrize("level", [0, 9, -3])
def test_level_out_of_range(level):
    with pytest.raises(hs.ConfigError):
        hs.build_mesh(level)


def test_boundary_nodes_full_square():
    assert hs.boundary_nodes(hs.build_mesh(1), FULL).size == 8
    assert hs.boundary_nodes(hs.build_mesh(2), FULL).size == 16


def test_boundary_nodes_left_half_level2():
    mesh = hs.build_mesh(2)
    got = hs.boundary_nodes(mesh, hs.Rect(0.0, 0.5, 0.0, 1.0))
    # Perimeter of the 3x5 node block: all of it except the middle column's
    # three interior rows.
    assert got.size == 12
    expected = sorted(
        j * 5 + i
        for i in range(3)
        for j in range(5)
        if i in (0, 2) or j in (0, 4)
    )
    assert got.tolist() == expected


def test_interior_nodes():
    mesh1 = hs.build_mesh(1)
    assert hs.interior_nodes(mesh1, FULL).tolist() == [4]
    mesh2 = hs.build_mesh(2)
    assert hs.interior_nodes(mesh2, FULL).size == 9
    assert hs.interior_nodes(mesh2, hs.Rect(0.0, 0.5, 0.0, 1.0)).tolist() == [6, 11, 16]


def test_misaligned_region_raises():
    mesh = hs.build_mesh(2)
    with pytest.raises(hs.GeometryError):
        hs.boundary_nodes(mesh, hs.Rect(0.0, 0.3, 0.0, 1.0))
    with pytest.raises(hs.GeometryError):
        hs.boundary_nodes(mesh, hs.Rect(0.5, 0.5, 0.0, 1.0))


def test_boundary_interior_partition_region():
    mesh = hs.build_mesh(3)
    rects = [FULL, hs.Rect(0.0, 0.5, 0.0, 1.0), hs.Rect(0.25, 0.75, 0.25, 0.5)]
    for rect in rects:
        bnd = hs.boundary_nodes(mesh, rect)
        inner = hs.interior_nodes(mesh, rect)
        allnodes = region_nodes(mesh, rect)
        assert np.intersect1d(bnd, inner).size == 0
        assert np.array_equal(np.union1d(bnd, inner), allnodes)


def test_triangles_in_region_cover():
    mesh = hs.build_mesh(2)
    left = triangles_in_region(mesh, hs.Rect(0.0, 0.5, 0.0, 1.0))
    right = triangles_in_region(mesh, hs.Rect(0.5, 1.0, 0.0, 1.0))
    assert left.size == right.size == mesh.n_triangles // 2
    assert np.intersect1d(left, right).size == 0


def test_dump_roundtrip():
    mesh = hs.build_mesh(1)
    lines = dump_mesh(mesh).strip().split("\n")
    assert len(lines) == mesh.n_nodes + mesh.n_triangles
    idx, x, y = lines[3].split()
    assert int(idx) == 3
    assert np.isclose(float(x), mesh.nodes[3, 0])
    v = lines[mesh.n_nodes].split()
    assert [int(t) for t in v] == mesh.triangles[0].tolist()


def test_deterministic_construction():
    a, b = hs.build_mesh(3), hs.build_mesh(3)
    assert np.array_equal(a.nodes, b.nodes)
    assert np.array_equal(a.triangles, b.triangles)
