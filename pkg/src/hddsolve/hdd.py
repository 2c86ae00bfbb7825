"""Core engine: per-node solution maps built bottom-up by Schur complements.

Every tree node omega carries a pair of maps over its index sets.  The pair
(psi_g, psi_f) represents the boundary residual of the local Dirichlet solve,

    R_omega(g, f) = psi_g @ g_omega - psi_f @ f_omega,

i.e. the discrete Neumann data a(U, b_i) - (f, b_i) on the node's boundary.
psi_g is the Schur-reduced local stiffness (symmetric, zero row sums) and
psi_f the reduced load matrix.  At a merge the two sons' residual maps are
scatter-added over [boundary | interface] of the father; requiring the summed
residual to vanish on the interface (the discrete flux-matching condition)
determines the interface block system, whose elimination yields the father's
(psi_g, psi_f) together with the interface solution maps

    phi_g = -A22^{-1} A21,      phi_f = A22^{-1} B2,

so that the solution on the interface is phi_g @ g_omega + phi_f @ f_omega.
The bottom-up sweep discards son maps eagerly; the top-down sweep applies the
stored phi maps to produce the solution on every interface.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import lowrank
from .ddtree import DDNode, DDTree, locate
from .errors import NumericalError, UsageError
from .fem import CoefficientField, cell_patterns


def _dense(m):
    return m if isinstance(m, np.ndarray) else m.to_dense()


def _matvec(m, x):
    return m @ x if isinstance(m, np.ndarray) else m.matvec(x)


def _rmatvec(m, y):
    return m.T @ y if isinstance(m, np.ndarray) else m.rmatvec(y)


def _bytes(m):
    return m.nbytes


def _rank(m):
    return 0 if isinstance(m, np.ndarray) else m.max_rank()


@dataclass
class PsiMap:
    """Residual maps of one node: psi_g over (boundary x boundary), psi_f over
    (boundary x omega).  Parts are dense arrays or compressed block matrices."""

    node_id: int
    psi_g: object
    psi_f: object

    def residual(self, g, f):
        """Boundary residual psi_g @ g - psi_f @ f."""
        return _matvec(self.psi_g, g) - _matvec(self.psi_f, f)

    @property
    def nbytes(self):
        return _bytes(self.psi_g) + _bytes(self.psi_f)

    @property
    def dense_nbytes(self):
        return 8 * (np.prod(_shape(self.psi_g)) + np.prod(_shape(self.psi_f)))


@dataclass
class PhiMap:
    """Interface maps of one node: phi_g over (gamma x boundary), phi_f over
    (gamma x omega)."""

    node_id: int
    phi_g: object
    phi_f: object

    def apply(self, g, f):
        """Solution on the interface for local data (g, f)."""
        return _matvec(self.phi_g, g) + _matvec(self.phi_f, f)

    def apply_g_t(self, z):
        return _rmatvec(self.phi_g, z)

    def apply_f_t(self, z):
        return _rmatvec(self.phi_f, z)

    @property
    def nbytes(self):
        return _bytes(self.phi_g) + _bytes(self.phi_f)

    @property
    def dense_nbytes(self):
        return 8 * (np.prod(_shape(self.phi_g)) + np.prod(_shape(self.phi_f)))


def _shape(m):
    return m.shape


@dataclass(frozen=True)
class LocalData:
    """Right-hand side over a node and Dirichlet values on its boundary."""

    f_omega: np.ndarray
    g_omega: np.ndarray


@dataclass(frozen=True)
class SolveMode:
    """Which phi maps the bottom-up sweep retains."""

    kind: str                    # "keep_phi_all" | "keep_phi_path" | "functionals_only"
    target: int | None = None
    keep_depth: int = 0

    @classmethod
    def keep_all(cls):
        return cls(kind="keep_phi_all")

    @classmethod
    def keep_path(cls, target: int):
        return cls(kind="keep_phi_path", target=target)

    @classmethod
    def functionals_only(cls, keep_depth: int = 0):
        return cls(kind="functionals_only", keep_depth=keep_depth)


@dataclass
class MapStats:
    node_id: int
    depth: int
    n_boundary: int
    n_interface: int
    phi_dense_bytes: int
    phi_bytes: int
    psi_dense_bytes: int
    psi_bytes: int
    max_block_rank: int


@dataclass
class BuildDiagnostics:
    """Optional instrumentation for the bottom-up sweep."""

    keep_psi: bool = False
    collect_interface_eigs: bool = False
    keep_root_blocks: bool = False
    min_interface_eigs: dict = field(default_factory=dict)
    root_atilde: np.ndarray | None = None
    root_btilde: np.ndarray | None = None


@dataclass
class MapStore:
    tree: DDTree
    mode: SolveMode
    compression: lowrank.ToleranceSpec | None
    phi: dict = field(default_factory=dict)
    psi: dict = field(default_factory=dict)
    root_psi: PsiMap | None = None
    stats: list = field(default_factory=list)
    peak_live_bytes: int = 0
    store_bytes: int = 0
    solution_allocations: int = 0
    functionals: dict = field(default_factory=dict)
    diagnostics: BuildDiagnostics | None = None

    @property
    def retained_phi_count(self):
        return len(self.phi)


def _retained_ids(tree: DDTree, mode: SolveMode):
    internal = {nd.id for nd in tree.internal_nodes()}
    if mode.kind == "keep_phi_all":
        return internal
    if mode.kind == "keep_phi_path":
        if mode.target is None or not (0 <= mode.target < len(tree.nodes)):
            raise UsageError("keep_phi_path requires a valid target node id")
        keep = set(tree.path_to(mode.target))
        stack = [mode.target]
        while stack:
            nd = tree.nodes[stack.pop()]
            if nd.sons is not None:
                keep.update(nd.sons)
                stack.extend(nd.sons)
        return keep & internal
    if mode.kind == "functionals_only":
        return {i for i in internal if tree.nodes[i].depth < mode.keep_depth}
    raise UsageError(f"unknown solve mode {mode.kind!r}")


def leaf_psi(tree: DDTree, node: DDNode, kappa: CoefficientField) -> PsiMap:
    """Residual maps of a leaf cell, assembled from its two triangles."""
    if not node.is_leaf:
        raise UsageError("leaf_psi requires a leaf node")
    p1, p2, load = cell_patterns(tree.mesh.h)
    t1, t2 = tree.cell_leaf_triangles(node)
    psi_g = kappa.values[t1] * p1 + kappa.values[t2] * p2
    return PsiMap(node_id=node.id, psi_g=psi_g, psi_f=np.diag(load))


def assemble_father(psi1: PsiMap, psi2: PsiMap, node: DDNode):
    """Scatter-add the sons' maps over [boundary | interface] of the father.

    Returns (a_tilde, b_tilde): the block stiffness over the union index set
    (entries at shared nodes accumulate, in particular the interface diagonal
    block is the sum of both sons' contributions) and the merged load matrix.
    """
    if node.is_leaf:
        raise UsageError("assemble_father requires an internal node")
    nk = node.n_boundary + node.n_interface
    nw = node.idx_omega.size
    g1, g2 = _dense(psi1.psi_g), _dense(psi2.psi_g)
    f1, f2 = _dense(psi1.psi_f), _dense(psi2.psi_f)
    if g1.shape[0] != node.bpos1.size or g2.shape[0] != node.bpos2.size \
            or f1.shape[1] != node.opos1.size or f2.shape[1] != node.opos2.size:
        raise NumericalError("son index sets do not match the merge plan", node.id)
    a_tilde = np.zeros((nk, nk))
    b_tilde = np.zeros((nk, nw))
    a_tilde[np.ix_(node.bpos1, node.bpos1)] += g1
    a_tilde[np.ix_(node.bpos2, node.bpos2)] += g2
    b_tilde[np.ix_(node.bpos1, node.opos1)] += f1
    b_tilde[np.ix_(node.bpos2, node.opos2)] += f2
    return a_tilde, b_tilde


def schur_eliminate(a_tilde, b_tilde, n_boundary, node_id=None):
    """Eliminate the interface block of the father system.

    Returns dense (psi_g, psi_f, phi_g, phi_f).  The interface block is
    factored as symmetric positive definite; on failure a pivoted symmetric
    indefinite solve is used with a warning, and a singular block raises.
    """
    nb = n_boundary
    a11 = a_tilde[:nb, :nb]
    a12 = a_tilde[:nb, nb:]
    a22 = a_tilde[nb:, nb:]
    b1 = b_tilde[:nb, :]
    b2 = b_tilde[nb:, :]
    ng = a22.shape[0]
    if ng == 0:
        phi_g = np.zeros((0, nb))
        phi_f = np.zeros((0, b_tilde.shape[1]))
        return a11.copy(), b1.copy(), phi_g, phi_f
    rhs = np.hstack([a_tilde[nb:, :nb], b2])
    try:
        factor = scipy.linalg.cho_factor(a22, lower=True, check_finite=False)
        x = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        warnings.warn(
            f"interface block at node {node_id} is not positive definite; "
            "falling back to a pivoted symmetric-indefinite solve",
            RuntimeWarning,
        )
        try:
            x = scipy.linalg.solve(a22, rhs, assume_a="sym", check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"singular interface block: {exc}", node_id) from exc
    xa, xb = x[:, :nb], x[:, nb:]
    psi_g = a11 - a12 @ xa
    psi_g = 0.5 * (psi_g + psi_g.T)
    psi_f = b1 - a12 @ xb
    return psi_g, psi_f, -xa, xb


def _maybe_compress(mat, row_ids, col_ids, mesh, spec):
    if spec is None or min(mat.shape) == 0 or max(mat.shape) <= spec.n_min:
        return mat
    layout = lowrank.block_partition(
        row_ids, mesh.nodes[row_ids], col_ids, mesh.nodes[col_ids], spec
    )
    return lowrank.BlockMatrix.from_dense(mat, layout)


def leaves_to_root(
    tree: DDTree,
    kappa: CoefficientField,
    mode: SolveMode | None = None,
    compression: lowrank.ToleranceSpec | None = None,
    threads: int = 1,
    tracker=None,
    diagnostics: BuildDiagnostics | None = None,
) -> MapStore:
    """Bottom-up sweep: build phi maps (and optional functionals) for all nodes.

    Son psi maps are freed right after each merge.  Nodes are processed one
    tree depth at a time so multi-threaded runs produce results identical to
    the serial ones; within a depth the per-node work is independent.
    """
    mode = mode or SolveMode.keep_all()
    store = MapStore(tree=tree, mode=mode, compression=compression, diagnostics=diagnostics)
    retained = _retained_ids(tree, mode)
    mesh = tree.mesh
    live = {}

    p1, p2, load = cell_patterns(mesh.h)
    load_diag = np.diag(load)

    def do_leaf(node):
        t1, t2 = tree.cell_leaf_triangles(node)
        psi = PsiMap(node.id, kappa.values[t1] * p1 + kappa.values[t2] * p2, load_diag)
        return node.id, psi, None, None

    def do_merge(node):
        s1, s2 = node.sons
        a_tilde, b_tilde = assemble_father(live[s1], live[s2], node)
        diag_payload = None
        if diagnostics is not None:
            if diagnostics.collect_interface_eigs and node.n_interface > 0:
                a22 = a_tilde[node.n_boundary:, node.n_boundary:]
                diag_payload = float(np.linalg.eigvalsh(a22)[0])
            if diagnostics.keep_root_blocks and node.id == tree.root_id:
                diagnostics.root_atilde = a_tilde.copy()
                diagnostics.root_btilde = b_tilde.copy()
        psi_g, psi_f, phi_g, phi_f = schur_eliminate(a_tilde, b_tilde, node.n_boundary, node.id)
        gamma, bnd, omega = node.idx_interface, node.idx_boundary, node.idx_omega
        psi = PsiMap(
            node.id,
            _maybe_compress(psi_g, bnd, bnd, mesh, compression),
            _maybe_compress(psi_f, bnd, omega, mesh, compression),
        )
        phi = PhiMap(
            node.id,
            _maybe_compress(phi_g, gamma, bnd, mesh, compression),
            _maybe_compress(phi_f, gamma, omega, mesh, compression),
        )
        return node.id, psi, phi, diag_payload

    by_depth = {}
    for nd in tree.nodes:
        by_depth.setdefault(nd.depth, []).append(nd)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for depth in sorted(by_depth, reverse=True):
            level = by_depth[depth]
            work = do_leaf if level[0].is_leaf else do_merge
            results = list(executor.map(work, level)) if executor else [work(nd) for nd in level]
            for node_id, psi, phi, diag_payload in results:
                node = tree.nodes[node_id]
                live[node_id] = psi
                if tracker is not None:
                    if phi is None:
                        tracker.on_leaf(tree, node)
                    else:
                        tracker.on_merge(tree, node, phi)
                if diag_payload is not None:
                    diagnostics.min_interface_eigs[node_id] = diag_payload
                if phi is not None:
                    stat = MapStats(
                        node_id=node_id, depth=node.depth,
                        n_boundary=node.n_boundary, n_interface=node.n_interface,
                        phi_dense_bytes=int(phi.dense_nbytes), phi_bytes=int(phi.nbytes),
                        psi_dense_bytes=int(psi.dense_nbytes), psi_bytes=int(psi.nbytes),
                        max_block_rank=max(
                            _rank(phi.phi_g), _rank(phi.phi_f), _rank(psi.psi_g), _rank(psi.psi_f)
                        ),
                    )
                    store.stats.append(stat)
                    if node_id in retained:
                        store.phi[node_id] = phi
                        store.store_bytes += int(phi.nbytes)
                    if diagnostics is not None and diagnostics.keep_psi:
                        store.psi[node_id] = psi
            live_bytes = store.store_bytes + sum(p.nbytes for p in live.values())
            store.peak_live_bytes = max(store.peak_live_bytes, int(live_bytes))
            for node_id, _, _, _ in results:
                node = tree.nodes[node_id]
                if node.sons is not None and (diagnostics is None or not diagnostics.keep_psi):
                    for s in node.sons:
                        live.pop(s, None)
    finally:
        if executor is not None:
            executor.shutdown()

    store.root_psi = live[tree.root_id]
    if diagnostics is not None and diagnostics.keep_psi:
        store.psi.update(live)
    if tracker is not None:
        store.functionals = tracker.finish(tree)
    return store


def root_to_leaves(store: MapStore, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Top-down sweep: assemble the solution on every interface.

    f is the right-hand side over all mesh nodes, g the Dirichlet data over
    the sorted global boundary index set.  Requires a store built with
    keep_phi_all.
    """
    tree = store.tree
    if store.mode.kind != "keep_phi_all":
        raise UsageError("root_to_leaves requires a store built with SolveMode.keep_all()")
    root = tree.root
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.size != tree.mesh.n_nodes or g.size != root.idx_boundary.size:
        raise UsageError("data sizes do not match the mesh")
    u = np.full(tree.mesh.n_nodes, np.nan)
    store.solution_allocations += 1
    u[root.idx_boundary] = g
    stack = [(root.id, f, g)]
    while stack:
        node_id, f_omega, g_omega = stack.pop()
        node = tree.nodes[node_id]
        if node.is_leaf:
            continue
        if node.n_interface > 0:
            g_gamma = store.phi[node_id].apply(g_omega, f_omega)
            u[node.idx_interface] = g_gamma
            data = np.concatenate([g_omega, g_gamma])
        else:
            data = g_omega
        s1, s2 = node.sons
        stack.append((s1, f_omega[node.opos1], data[node.bpos1]))
        stack.append((s2, f_omega[node.opos2], data[node.bpos2]))
    if np.isnan(u).any():
        raise NumericalError("top-down sweep left unset nodes (tree completeness violated)")
    return u


def solve_subdomain(store: MapStore, target_id: int, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solution restricted to one tree node, using only the root-path and
    subtree phi maps.  Returns values aligned with the target's idx_omega."""
    tree = store.tree
    target = tree.nodes[target_id]
    path = tree.path_to(target_id)
    needed = [nid for nid in path[:-1]]
    stack = [target_id]
    while stack:
        nd = tree.nodes[stack.pop()]
        if nd.sons is not None:
            needed.append(nd.id)
            stack.extend(nd.sons)
    missing = [nid for nid in needed if nid not in store.phi]
    if missing:
        raise UsageError(
            f"store does not retain phi maps for nodes {missing[:4]}; "
            "build with SolveMode.keep_path(target) or keep_all()"
        )

    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    # Walk the path down to the target, restricting the data at each step.
    f_omega, g_omega = f, g
    for nid, next_id in zip(path[:-1], path[1:]):
        node = tree.nodes[nid]
        if node.n_interface > 0:
            g_gamma = store.phi[nid].apply(g_omega, f_omega)
            data = np.concatenate([g_omega, g_gamma])
        else:
            data = g_omega
        if node.sons[0] == next_id:
            f_omega, g_omega = f_omega[node.opos1], data[node.bpos1]
        else:
            f_omega, g_omega = f_omega[node.opos2], data[node.bpos2]

    u_t = np.full(target.idx_omega.size, np.nan)
    u_t[locate(target.idx_omega, target.idx_boundary)] = g_omega
    stack = [(target_id, f_omega, g_omega)]
    while stack:
        node_id, f_o, g_o = stack.pop()
        node = tree.nodes[node_id]
        if node.is_leaf:
            continue
        if node.n_interface > 0:
            g_gamma = store.phi[node_id].apply(g_o, f_o)
            u_t[locate(target.idx_omega, node.idx_interface)] = g_gamma
            data = np.concatenate([g_o, g_gamma])
        else:
            data = g_o
        s1, s2 = node.sons
        stack.append((s1, f_o[node.opos1], data[node.bpos1]))
        stack.append((s2, f_o[node.opos2], data[node.bpos2]))
    if np.isnan(u_t).any():
        raise NumericalError("subdomain sweep left unset nodes")
    return u_t


def matching_residuals(store: MapStore, f: np.ndarray, g: np.ndarray) -> dict:
    """Flux-matching residual on every interface during a debug top-down sweep.

    Requires a store built with diagnostics.keep_psi.  Returns a dict mapping
    internal node id to the residual vector over its interface; all entries
    should vanish to solver accuracy.
    """
    tree = store.tree
    if not store.psi:
        raise UsageError("matching_residuals requires a store built with keep_psi diagnostics")
    residuals = {}
    root = tree.root
    stack = [(root.id, np.asarray(f, dtype=float), np.asarray(g, dtype=float))]
    while stack:
        node_id, f_omega, g_omega = stack.pop()
        node = tree.nodes[node_id]
        if node.is_leaf:
            continue
        if node.n_interface > 0:
            g_gamma = store.phi[node_id].apply(g_omega, f_omega)
            data = np.concatenate([g_omega, g_gamma])
        else:
            data = g_omega
        s1, s2 = node.sons
        d1 = (f_omega[node.opos1], data[node.bpos1])
        d2 = (f_omega[node.opos2], data[node.bpos2])
        if node.n_interface > 0:
            res = np.zeros(node.n_interface)
            nb = node.n_boundary
            for (f_s, g_s), pos, sid in ((d1, node.bpos1, s1), (d2, node.bpos2, s2)):
                r = store.psi[sid].residual(g_s, f_s)
                sel = pos >= nb
                res[pos[sel] - nb] += r[sel]
            residuals[node_id] = res
        stack.append((s1, d1[0], d1[1]))
        stack.append((s2, d2[0], d2[1]))
    return residuals


def dump_store_stats(store: MapStore) -> str:
    """Text lines `node_depth |boundary| |gamma| dense_bytes compressed_bytes max_block_rank`."""
    lines = []
    for st in sorted(store.stats, key=lambda s: (s.depth, s.node_id)):
        dense = st.phi_dense_bytes + st.psi_dense_bytes
        stored = st.phi_bytes + st.psi_bytes
        lines.append(
            f"{st.depth} {st.n_boundary} {st.n_interface} {dense} {stored} {st.max_block_rank}"
        )
    return "\n".join(lines) + "\n"
