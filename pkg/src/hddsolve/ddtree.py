"""Hierarchical domain-decomposition tree over the structured mesh.

The unit square is bisected recursively along grid lines, alternating the cut
axis by depth (vertical cut first).  Leaves are single grid cells.  Each node
carries three index sets:

  idx_omega      all nodes of the closed subdomain,
  idx_boundary   nodes on the subdomain perimeter,
  idx_interface  the internal cut between the two sons, excluding nodes that
                 lie on the subdomain perimeter itself (empty for leaves).

With that exclusive definition every mesh node belongs to exactly one of the
global boundary or the interface of exactly one tree node, which is what lets
the top-down sweep produce the complete solution.

Internal nodes also carry a precomputed merge plan: the positions of each
son's boundary inside [idx_boundary | idx_interface] and of each son's node
set inside the father's, so the per-coefficient builds pay no index searching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .mesh import Mesh, Rect, boundary_nodes, region_nodes


def locate(sorted_ids: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Positions of ids inside a sorted id array; every id must be present."""
    pos = np.searchsorted(sorted_ids, ids)
    if pos.size:
        if (pos >= sorted_ids.size).any() or not np.array_equal(sorted_ids[pos], ids):
            raise UsageError("index set lookup failed: ids not contained in target set")
    return pos


@dataclass
class DDNode:
    id: int
    depth: int
    cells: tuple          # (i0, i1, j0, j1) grid-cell bounds
    rect: Rect
    idx_omega: np.ndarray
    idx_boundary: np.ndarray
    idx_interface: np.ndarray
    sons: tuple | None = None      # (son1_id, son2_id) or None for leaves
    parent: int | None = None
    # Merge plan (internal nodes only).  K := [idx_boundary | idx_interface];
    # bpos_i locates son i's boundary in K, opos_i locates son i's nodes in
    # the father's idx_omega.
    bpos1: np.ndarray = field(default=None, repr=False)
    bpos2: np.ndarray = field(default=None, repr=False)
    opos1: np.ndarray = field(default=None, repr=False)
    opos2: np.ndarray = field(default=None, repr=False)

    @property
    def is_leaf(self):
        return self.sons is None

    @property
    def n_boundary(self):
        return self.idx_boundary.size

    @property
    def n_interface(self):
        return self.idx_interface.size

    @property
    def area(self):
        return self.rect.area


@dataclass
class DDTree:
    mesh: Mesh
    nodes: list          # post-order: sons precede their father
    root_id: int

    @property
    def root(self) -> DDNode:
        return self.nodes[self.root_id]

    def son(self, node: DDNode, i: int) -> DDNode:
        return self.nodes[node.sons[i - 1]]

    def internal_nodes(self):
        return [nd for nd in self.nodes if not nd.is_leaf]

    def leaves(self):
        return [nd for nd in self.nodes if nd.is_leaf]

    def nodes_at_depth(self, depth: int):
        return [nd for nd in self.nodes if nd.depth == depth]

    @property
    def depth(self):
        return max(nd.depth for nd in self.nodes)

    def path_to(self, node_id: int):
        """Node ids from the root down to (and including) node_id."""
        path = []
        nid = node_id
        while nid is not None:
            path.append(nid)
            nid = self.nodes[nid].parent
        return path[::-1]

    def cell_leaf_triangles(self, node: DDNode) -> np.ndarray:
        """Triangle indices of a leaf cell."""
        i0, _, j0, _ = node.cells
        ncell = self.mesh.m - 1
        cell = i0 * ncell + j0
        return np.array([2 * cell, 2 * cell + 1])


def build_tree(mesh: Mesh) -> DDTree:
    """Build the alternating-bisection tree down to single-cell leaves."""
    nodes = []
    ncell = mesh.m - 1
    h = mesh.h

    def make_node(i0, i1, j0, j1, depth, parent):
        rect = Rect(i0 * h, i1 * h, j0 * h, j1 * h)
        omega = region_nodes(mesh, rect)
        bnd = boundary_nodes(mesh, rect)
        nx, ny = i1 - i0, j1 - j0
        if nx == 1 and ny == 1:
            node = DDNode(
                id=len(nodes), depth=depth, cells=(i0, i1, j0, j1), rect=rect,
                idx_omega=omega, idx_boundary=bnd,
                idx_interface=np.empty(0, dtype=np.int64), parent=parent,
            )
            nodes.append(node)
            return node.id

        axis = 0 if depth % 2 == 0 else 1
        if axis == 0 and nx == 1:
            axis = 1
        elif axis == 1 and ny == 1:
            axis = 0
        if axis == 0:
            mid = (i0 + i1) // 2
            parts = [(i0, mid, j0, j1), (mid, i1, j0, j1)]
        else:
            mid = (j0 + j1) // 2
            parts = [(i0, i1, j0, mid), (i0, i1, mid, j1)]

        myid = len(nodes) + 0  # placeholder; real id assigned after sons (post-order)
        son_ids = [make_node(*p, depth + 1, None) for p in parts]
        s1, s2 = nodes[son_ids[0]], nodes[son_ids[1]]
        gamma = np.setdiff1d(s1.idx_boundary, bnd, assume_unique=True)

        node = DDNode(
            id=len(nodes), depth=depth, cells=(i0, i1, j0, j1), rect=rect,
            idx_omega=omega, idx_boundary=bnd, idx_interface=gamma,
            sons=tuple(son_ids), parent=parent,
        )
        nb = bnd.size
        for s, bslot, oslot in ((s1, "bpos1", "opos1"), (s2, "bpos2", "opos2")):
            on_bnd = np.isin(s.idx_boundary, bnd, assume_unique=True)
            pos = np.empty(s.idx_boundary.size, dtype=np.int64)
            pos[on_bnd] = locate(bnd, s.idx_boundary[on_bnd])
            pos[~on_bnd] = nb + locate(gamma, s.idx_boundary[~on_bnd])
            setattr(node, bslot, pos)
            setattr(node, oslot, locate(omega, s.idx_omega))
            s.parent = node.id
        nodes.append(node)
        return node.id

    root_id = make_node(0, ncell, 0, ncell, 0, None)
    return DDTree(mesh=mesh, nodes=nodes, root_id=root_id)


def gamma_split(tree: DDTree, node: DDNode, son_index: int):
    """Split son boundary into (external part Gamma_i, interface gamma).

    Gamma_i is the father-boundary portion owned by son i; together with the
    interface it covers the son's boundary disjointly.
    """
    if node.is_leaf:
        raise UsageError("gamma_split requires an internal node")
    if son_index not in (1, 2):
        raise UsageError("son_index must be 1 or 2")
    son = tree.son(node, son_index)
    gamma = node.idx_interface
    ext = np.setdiff1d(son.idx_boundary, gamma, assume_unique=True)
    return ext, gamma


def dump_tree(tree: DDTree) -> str:
    """Text lines `depth region |I(omega)| |I(boundary)| |I(gamma)|`."""
    lines = []
    for nd in tree.nodes:
        r = nd.rect
        region = f"[{r.x0:g},{r.x1:g}]x[{r.y0:g},{r.y1:g}]"
        lines.append(
            f"{nd.depth} {region} {nd.idx_omega.size} {nd.idx_boundary.size} {nd.idx_interface.size}"
        )
    return "\n".join(lines) + "\n"
