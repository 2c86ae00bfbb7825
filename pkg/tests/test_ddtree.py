import numpy as np
import pytest

import hddsolve as hs
from hddsolve.ddtree import dump_tree, gamma_split

from conftest import FULL


def test_level1_root_interface_is_center_node():
    tree = hs.build_tree(hs.build_mesh(1))
    # The mid-column holds three nodes; the two on the outer boundary are
    # excluded from the interface by definition.
    assert tree.root.idx_interface.tolist() == [4]


def test_level2_root_interface():
    tree = hs.build_tree(hs.build_mesh(2))
    root = tree.root
    assert root.idx_interface.tolist() == [7, 12, 17]
    s1, s2 = tree.son(root, 1), tree.son(root, 2)
    expected = np.setdiff1d(
        np.intersect1d(s1.idx_boundary, s2.idx_boundary), root.idx_boundary
    )
    assert np.array_equal(root.idx_interface, expected)


def test_binary_and_son_partition(tree3):
    for nd in tree3.nodes:
        assert nd.sons is None or len(nd.sons) == 2
        if nd.sons is None:
            continue
        s1, s2 = tree3.son(nd, 1), tree3.son(nd, 2)
        assert np.array_equal(np.union1d(s1.idx_omega, s2.idx_omega), nd.idx_omega)
        int1 = np.setdiff1d(s1.idx_omega, s1.idx_boundary)
        int2 = np.setdiff1d(s2.idx_omega, s2.idx_boundary)
        assert np.intersect1d(int1, int2).size == 0
        # Both sons cover about half of the father.
        assert s1.area == pytest.approx(nd.area / 2)
        assert s2.area == pytest.approx(nd.area / 2)


def test_interface_definition_invariant(tree3):
    for nd in tree3.internal_nodes():
        s1, s2 = tree3.son(nd, 1), tree3.son(nd, 2)
        expected = np.setdiff1d(
            np.intersect1d(s1.idx_boundary, s2.idx_boundary), nd.idx_boundary
        )
        assert np.array_equal(nd.idx_interface, expected)
        assert np.array_equal(
            nd.idx_interface, np.setdiff1d(s2.idx_boundary, nd.idx_boundary)
        )


def test_completeness_every_node_exactly_once(tree3):
    mesh = tree3.mesh
    seen = np.zeros(mesh.n_nodes, dtype=int)
    seen[hs.boundary_nodes(mesh, FULL)] += 1
    for nd in tree3.nodes:
        seen[nd.idx_interface] += 1
    assert (seen == 1).all()


def test_depth_and_leaves(tree3):
    assert tree3.depth == 2 * tree3.mesh.level
    for leaf in tree3.leaves():
        assert leaf.idx_omega.size == 4
        assert leaf.idx_interface.size == 0
        assert tree3.cell_leaf_triangles(leaf).size == 2
    assert len(tree3.leaves()) == 4**tree3.mesh.level


def test_gamma_split_contract(tree3):
    for nd in tree3.internal_nodes():
        g1 = gamma_split(tree3, nd, 1)
        g2 = gamma_split(tree3, nd, 2)
        assert np.array_equal(g1[1], g2[1])
        for son_index, (ext, gam) in ((1, g1), (2, g2)):
            son = tree3.son(nd, son_index)
            assert ext.size + gam.size == son.idx_boundary.size
            assert np.array_equal(np.union1d(ext, gam), son.idx_boundary)
            assert np.intersect1d(ext, gam).size == 0
            # The external part is the father's boundary restricted to the son.
            assert np.array_equal(ext, np.intersect1d(nd.idx_boundary, son.idx_omega))


def test_gamma_split_on_leaf_raises(tree3):
    with pytest.raises(hs.UsageError):
        gamma_split(tree3, tree3.leaves()[0], 1)


def test_merge_plan_positions(tree3):
    for nd in tree3.internal_nodes():
        concat = np.concatenate([nd.idx_boundary, nd.idx_interface])
        for i, bpos, opos in ((1, nd.bpos1, nd.opos1), (2, nd.bpos2, nd.opos2)):
            son = tree3.son(nd, i)
            assert np.array_equal(concat[bpos], son.idx_boundary)
            assert np.array_equal(nd.idx_omega[opos], son.idx_omega)


def test_dump_tree_lines(tree3):
    lines = dump_tree(tree3).strip().split("\n")
    assert len(lines) == len(tree3.nodes)
    parts = lines[-1].split()
    assert parts[0] == "0"  # post-order: root last


def test_deterministic_build():
    a = hs.build_tree(hs.build_mesh(2))
    b = hs.build_tree(hs.build_mesh(2))
    for na, nb in zip(a.nodes, b.nodes):
        assert na.cells == nb.cells
        assert np.array_equal(na.idx_omega, nb.idx_omega)
        assert np.array_equal(na.idx_interface, nb.idx_interface)
