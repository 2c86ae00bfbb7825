"""Linear functionals of the solution, built without ever forming it.

A functional of the local data, l(d) = <l_f, f_omega> + <l_g, g_omega>, is
carried from the leaves to the root of the tree.  At a merge the sons'
vectors are scattered onto the father's index sets with weights (c1, c2) and
the interface portion z of the boundary weights is folded through the
transposed interface maps:

    l_g_father = scatter(c1 l_g1 | Gamma1) + scatter(c2 l_g2 | Gamma2) + phi_g^T z
    l_f_father = scatter(c1 l_f1) + scatter(c2 l_f2) + phi_f^T z
    z          = c1 l_g1 | gamma + c2 l_g2 | gamma

With c_i = |omega_i| / |omega| this recursion carries subdomain means; with
(1, 0) weights it transports any functional unchanged to an ancestor, which
is how per-subdomain means and point evaluations reach the root where they
can be applied to the global data directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ddtree import DDNode, DDTree, locate
from .errors import UsageError
from .hdd import PhiMap, SolveMode, leaves_to_root


@dataclass
class Functional:
    """Vector pair representing l(d) = <l_f, f_omega> + <l_g, g_omega>."""

    node_id: int
    l_g: np.ndarray
    l_f: np.ndarray

    def evaluate(self, f_omega, g_omega) -> float:
        return float(self.l_f @ np.asarray(f_omega) + self.l_g @ np.asarray(g_omega))


def triangle_mean_weights() -> np.ndarray:
    """Vertex weights of the mean over a single triangle."""
    return np.full(3, 1.0 / 3.0)


def leaf_mean_functional(tree: DDTree, node: DDNode) -> Functional:
    """Mean-value functional of a leaf cell: per-triangle thirds of the area,
    accumulated at the vertices and normalized by the cell area."""
    if not node.is_leaf:
        raise UsageError("leaf_mean_functional requires a leaf node")
    mesh = tree.mesh
    l_g = np.zeros(node.idx_boundary.size)
    total = 0.0
    for t in tree.cell_leaf_triangles(node):
        verts = mesh.triangles[t]
        area = mesh.triangle_areas[t]
        l_g[locate(node.idx_boundary, np.sort(verts))] += area / 3.0
        total += area
    l_g /= total
    return Functional(node_id=node.id, l_g=l_g, l_f=np.zeros(node.idx_omega.size))


def _gamma_scatter(node, c1, c2, vec1, vec2):
    """Interface part z = c1 vec1|gamma + c2 vec2|gamma."""
    nb = node.n_boundary
    z = np.zeros(node.n_interface)
    if vec1 is not None:
        sel = node.bpos1 >= nb
        z[node.bpos1[sel] - nb] += c1 * vec1[sel]
    if vec2 is not None:
        sel = node.bpos2 >= nb
        z[node.bpos2[sel] - nb] += c2 * vec2[sel]
    return z


def merge_functional_g(l1, l2, phi: PhiMap, c1, c2, node: DDNode) -> np.ndarray:
    """Boundary weight vector of the father functional.

    l1, l2 are the sons' functionals (either may be None, meaning zero).
    """
    nb = node.n_boundary
    out = np.zeros(nb)
    for l, c, pos in ((l1, c1, node.bpos1), (l2, c2, node.bpos2)):
        if l is not None:
            sel = pos < nb
            out[pos[sel]] += c * l.l_g[sel]
    if node.n_interface > 0:
        z = _gamma_scatter(node, c1, c2, None if l1 is None else l1.l_g,
                           None if l2 is None else l2.l_g)
        out += phi.apply_g_t(z)
    return out


def merge_functional_f(l1, l2, phi: PhiMap, c1, c2, node: DDNode) -> np.ndarray:
    """Volume weight vector of the father functional (zero-extension plus the
    transposed interface-map correction, same z as the boundary merge)."""
    out = np.zeros(node.idx_omega.size)
    for l, c, pos in ((l1, c1, node.opos1), (l2, c2, node.opos2)):
        if l is not None:
            out[pos] += c * l.l_f
    if node.n_interface > 0:
        z = _gamma_scatter(node, c1, c2, None if l1 is None else l1.l_g,
                           None if l2 is None else l2.l_g)
        out += phi.apply_f_t(z)
    return out


def merge_functional(l1, l2, phi: PhiMap, c1, c2, node: DDNode) -> Functional:
    return Functional(
        node_id=node.id,
        l_g=merge_functional_g(l1, l2, phi, c1, c2, node),
        l_f=merge_functional_f(l1, l2, phi, c1, c2, node),
    )


@dataclass(frozen=True)
class MeanRequest:
    """Means of all tree nodes at one depth."""

    depth: int


@dataclass(frozen=True)
class NodeMeanRequest:
    """Mean of one specific tree node."""

    node_id: int


@dataclass(frozen=True)
class PointRequest:
    """Solution value at one mesh node."""

    node_index: int


class FunctionalTracker:
    """Carries requested functionals to the root during the bottom-up sweep.

    Keys of the finished dictionary: ("mean", node_id) and ("point",
    node_index).  Every node's own mean functional is maintained during the
    sweep (son means are dropped after each merge unless keep_node_means).
    """

    def __init__(self, tree: DDTree, requests, keep_node_means=False):
        self.keep_node_means = keep_node_means
        self.mean_depths = set()
        self.mean_nodes = set()
        self.point_targets = {}
        self.node_means = {}
        self.tracked = {}
        self.boundary_points = []
        gamma_owner = {}
        for nd in tree.internal_nodes():
            for idx in nd.idx_interface:
                gamma_owner[int(idx)] = nd.id
        root_boundary = set(int(i) for i in tree.root.idx_boundary)
        for req in requests:
            if isinstance(req, MeanRequest):
                if not (0 <= req.depth <= tree.depth):
                    raise UsageError(f"no tree nodes at depth {req.depth}")
                self.mean_depths.add(req.depth)
            elif isinstance(req, NodeMeanRequest):
                self.mean_nodes.add(req.node_id)
            elif isinstance(req, PointRequest):
                idx = int(req.node_index)
                if idx in root_boundary:
                    self.boundary_points.append(idx)
                elif idx in gamma_owner:
                    self.point_targets.setdefault(gamma_owner[idx], []).append(idx)
                else:
                    raise UsageError(f"mesh node {idx} not found on any interface")
            else:
                raise UsageError(f"unknown functional request {req!r}")

    def _maybe_track_mean(self, node):
        if node.depth in self.mean_depths or node.id in self.mean_nodes:
            mean = self.node_means[node.id]
            self.tracked[("mean", node.id)] = (node.id, mean)

    def on_leaf(self, tree, node):
        self.node_means[node.id] = leaf_mean_functional(tree, node)
        self._maybe_track_mean(node)

    def on_merge(self, tree, node, phi):
        s1, s2 = node.sons
        for idx in self.point_targets.get(node.id, ()):
            pos = int(locate(node.idx_interface, np.array([idx]))[0])
            e = np.zeros(node.n_interface)
            e[pos] = 1.0
            fn = Functional(node_id=node.id, l_g=phi.apply_g_t(e), l_f=phi.apply_f_t(e))
            self.tracked[("point", idx)] = (node.id, fn)
        for key, (owner, fn) in list(self.tracked.items()):
            if owner == s1:
                lifted = merge_functional(fn, None, phi, 1.0, 0.0, node)
            elif owner == s2:
                lifted = merge_functional(None, fn, phi, 0.0, 1.0, node)
            else:
                continue
            self.tracked[key] = (node.id, lifted)
        c1 = tree.nodes[s1].area / node.area
        c2 = tree.nodes[s2].area / node.area
        self.node_means[node.id] = merge_functional(
            self.node_means[s1], self.node_means[s2], phi, c1, c2, node
        )
        if not self.keep_node_means:
            del self.node_means[s1], self.node_means[s2]
        self._maybe_track_mean(node)

    def finish(self, tree):
        out = {}
        root = tree.root
        for key, (owner, fn) in self.tracked.items():
            if owner != root.id:
                raise UsageError(f"functional {key} was not carried to the root")
            out[key] = fn
        for idx in self.boundary_points:
            l_g = np.zeros(root.idx_boundary.size)
            l_g[locate(root.idx_boundary, np.array([idx]))[0]] = 1.0
            out[("point", idx)] = Functional(
                node_id=root.id, l_g=l_g, l_f=np.zeros(root.idx_omega.size)
            )
        return out


def mean_per_subdomain(tree, kappa, depth, compression=None, threads=1):
    """Mean-value functionals for every tree node at the given depth.

    Returns a list of (node_id, Functional) in node order; each functional is
    evaluated against the global data (f over all nodes, g on the boundary).
    """
    tracker = FunctionalTracker(tree, [MeanRequest(depth)])
    leaves_to_root(tree, kappa, SolveMode.functionals_only(), compression,
                   threads=threads, tracker=tracker)
    done = tracker.finish(tree)
    return [(nd.id, done[("mean", nd.id)]) for nd in tree.nodes_at_depth(depth)]


def point_functional(tree, kappa, node_index, compression=None, threads=1):
    """Functional returning the solution value at one mesh node."""
    tracker = FunctionalTracker(tree, [PointRequest(node_index)])
    leaves_to_root(tree, kappa, SolveMode.functionals_only(), compression,
                   threads=threads, tracker=tracker)
    return tracker.finish(tree)[("point", int(node_index))]


def dump_functionals(functionals) -> str:
    """Text lines `node_depth |l_g| |l_f| checksum` for regression."""
    lines = []
    for key in sorted(functionals, key=repr):
        fn = functionals[key]
        checksum = float(np.sum(fn.l_g) + np.sum(fn.l_f))
        lines.append(f"{key[0]}:{key[1]} {fn.l_g.size} {fn.l_f.size} {checksum:.12e}")
    return "\n".join(lines) + "\n"
