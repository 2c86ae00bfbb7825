"""Rank-truncated block storage for the solution maps.

A matrix over two geometric index sets is partitioned by recursive bisection
of both sets.  A block whose row and column clusters have disjoint bounding
boxes is stored in truncated-SVD form A B^T (weak admissibility); everything
else is subdivided until the dense leaf threshold n_min.  Truncation uses a
relative Frobenius criterion and degrades to dense storage whenever the
factored form would not actually save memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class ToleranceSpec:
    """Truncation tolerance (relative Frobenius), hard rank cap, dense-block size."""

    eps: float = 1e-6
    k_max: int = 64
    n_min: int = 32

    def __post_init__(self):
        if self.eps < 0 or self.n_min < 1 or self.k_max < 1:
            raise UsageError("invalid tolerance spec")


@dataclass
class RkBlock:
    """Factored block left @ right.T with left (p,k) and right (q,k)."""

    left: np.ndarray
    right: np.ndarray

    @property
    def rank(self):
        return self.left.shape[1]

    def to_dense(self):
        return self.left @ self.right.T

    @property
    def nbytes(self):
        return self.left.nbytes + self.right.nbytes


def compress(block: np.ndarray, spec: ToleranceSpec, scale: float | None = None):
    """Truncated-SVD compression of one block.

    Returns an RkBlock with ||M - left right^T||_F <= eps ||M||_F and
    rank <= k_max, or the dense block itself when factoring would not reduce
    storage (or would need rank above the cap).  `scale` adds an absolute
    floor eps_abs = 1e-14 * scale so that blocks that are numerically zero
    relative to their context collapse to rank 0.
    """
    block = np.asarray(block, dtype=float)
    p, q = block.shape
    if p == 0 or q == 0:
        return RkBlock(np.zeros((p, 0)), np.zeros((q, 0)))
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    total = float(np.sum(s**2))
    floor = 1e-14 * scale if scale is not None else 0.0
    s = np.where(s > floor, s, 0.0)
    budget = (spec.eps**2) * total
    tail = np.concatenate([np.cumsum((s**2)[::-1])[::-1][1:], [0.0]])
    keep = np.flatnonzero(tail <= budget)
    k = int(keep[0]) + 1 if keep.size else s.size
    if s.size and s[0] == 0.0:
        k = 0
    if k > spec.k_max or k * (p + q) >= p * q:
        return block
    return RkBlock(u[:, :k] * s[:k], vt[:k].T)


class Cluster:
    """Node of a geometric cluster tree over positions into an index array."""

    __slots__ = ("pos", "bbox", "children", "lo", "hi")

    def __init__(self, pos, bbox, children):
        self.pos = pos
        self.bbox = bbox
        self.children = children
        self.lo = 0
        self.hi = pos.size

    @property
    def is_leaf(self):
        return self.children is None


def _bbox(xy):
    return (xy[:, 0].min(), xy[:, 0].max(), xy[:, 1].min(), xy[:, 1].max())


def _build_cluster(pos, xy, n_min):
    if pos.size <= n_min:
        return Cluster(pos, _bbox(xy[pos]), None)
    box = _bbox(xy[pos])
    axis = 0 if (box[1] - box[0]) >= (box[3] - box[2]) else 1
    coords = xy[pos, axis]
    mid = 0.5 * (coords.min() + coords.max())
    left = coords < mid
    if not left.any() or left.all():
        order = np.argsort(coords, kind="stable")
        half = pos.size // 2
        left = np.zeros(pos.size, dtype=bool)
        left[order[:half]] = True
    sons = [_build_cluster(pos[left], xy, n_min), _build_cluster(pos[~left], xy, n_min)]
    return Cluster(pos, box, sons)


def _assign_ranges(cluster, offset=0):
    cluster.lo = offset
    if cluster.is_leaf:
        cluster.hi = offset + cluster.pos.size
    else:
        for son in cluster.children:
            offset = _assign_ranges(son, offset)
        cluster.hi = offset
    return cluster.hi


def _disjoint(b1, b2):
    return b1[1] < b2[0] or b2[1] < b1[0] or b1[3] < b2[2] or b2[3] < b1[2]


class Block:
    __slots__ = ("rows", "cols", "kind", "payload", "children")

    def __init__(self, rows, cols, kind, payload=None, children=None):
        self.rows = rows
        self.cols = cols
        self.kind = kind          # "dense" | "rk" | "split"
        self.payload = payload
        self.children = children


@dataclass
class BlockLayout:
    """Cluster trees plus admissibility pattern for one matrix shape."""

    row_ids: np.ndarray
    col_ids: np.ndarray
    row_cluster: Cluster
    col_cluster: Cluster
    spec: ToleranceSpec


def block_partition(row_ids, row_xy, col_ids, col_xy, spec: ToleranceSpec) -> BlockLayout:
    """Build the geometric bisection layout for a row set x column set."""
    row_ids = np.asarray(row_ids)
    col_ids = np.asarray(col_ids)
    rc = _build_cluster(np.arange(row_ids.size), np.asarray(row_xy, dtype=float), spec.n_min)
    cc = _build_cluster(np.arange(col_ids.size), np.asarray(col_xy, dtype=float), spec.n_min)
    _assign_ranges(rc)
    _assign_ranges(cc)
    return BlockLayout(row_ids=row_ids, col_ids=col_ids, row_cluster=rc, col_cluster=cc, spec=spec)


def _build_blocks(rc, cc, dense, spec, scale):
    if rc.pos.size == 0 or cc.pos.size == 0:
        return Block(rc, cc, "dense", payload=np.zeros((rc.pos.size, cc.pos.size)))
    if _disjoint(rc.bbox, cc.bbox):
        piece = compress(dense[np.ix_(rc.pos, cc.pos)], spec, scale=scale)
        if isinstance(piece, RkBlock):
            return Block(rc, cc, "rk", payload=piece)
        return Block(rc, cc, "dense", payload=piece)
    if rc.is_leaf and cc.is_leaf:
        return Block(rc, cc, "dense", payload=dense[np.ix_(rc.pos, cc.pos)].copy())
    rch = rc.children if not rc.is_leaf else [rc]
    cch = cc.children if not cc.is_leaf else [cc]
    children = [_build_blocks(r, c, dense, spec, scale) for r in rch for c in cch]
    return Block(rc, cc, "split", children=children)


class BlockMatrix:
    """Matrix stored blockwise over a BlockLayout."""

    def __init__(self, layout: BlockLayout, root: Block):
        self.layout = layout
        self.root = root

    @classmethod
    def from_dense(cls, dense, layout: BlockLayout):
        dense = np.asarray(dense, dtype=float)
        if dense.shape != (layout.row_ids.size, layout.col_ids.size):
            raise UsageError("dense matrix does not match the layout shape")
        scale = float(np.linalg.norm(dense)) if dense.size else 0.0
        root = _build_blocks(layout.row_cluster, layout.col_cluster, dense, layout.spec, scale)
        return cls(layout, root)

    @property
    def shape(self):
        return (self.layout.row_ids.size, self.layout.col_ids.size)

    def _walk(self, block=None):
        block = block or self.root
        stack = [block]
        while stack:
            b = stack.pop()
            if b.kind == "split":
                stack.extend(b.children)
            else:
                yield b

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        y = np.zeros(self.shape[0])
        for b in self._walk():
            xs = x[b.cols.pos]
            if b.kind == "dense":
                y[b.rows.pos] += b.payload @ xs
            else:
                y[b.rows.pos] += b.payload.left @ (b.payload.right.T @ xs)
        return y

    def rmatvec(self, y):
        y = np.asarray(y, dtype=float)
        x = np.zeros(self.shape[1])
        for b in self._walk():
            ys = y[b.rows.pos]
            if b.kind == "dense":
                x[b.cols.pos] += b.payload.T @ ys
            else:
                x[b.cols.pos] += b.payload.right @ (b.payload.left.T @ ys)
        return x

    def matmat(self, x):
        x = np.asarray(x, dtype=float)
        y = np.zeros((self.shape[0], x.shape[1]))
        for b in self._walk():
            xs = x[b.cols.pos]
            if b.kind == "dense":
                y[b.rows.pos] += b.payload @ xs
            else:
                y[b.rows.pos] += b.payload.left @ (b.payload.right.T @ xs)
        return y

    def to_dense(self):
        out = np.zeros(self.shape)
        for b in self._walk():
            if b.kind == "dense":
                out[np.ix_(b.rows.pos, b.cols.pos)] = b.payload
            else:
                out[np.ix_(b.rows.pos, b.cols.pos)] = b.payload.to_dense()
        return out

    @property
    def nbytes(self):
        total = 0
        for b in self._walk():
            total += b.payload.nbytes
        return total

    def max_rank(self):
        ranks = [b.payload.rank for b in self._walk() if b.kind == "rk"]
        return max(ranks) if ranks else 0

    def structure_lines(self):
        """Text lines `row_range col_range kind rank` in cluster ordering."""
        lines = []
        for b in self._walk():
            rank = b.payload.rank if b.kind == "rk" else min(b.rows.pos.size, b.cols.pos.size)
            lines.append(
                f"{b.rows.lo}:{b.rows.hi} {b.cols.lo}:{b.cols.hi} {b.kind} {rank}"
            )
        return lines


def _retruncate_rk(rk: RkBlock, spec: ToleranceSpec, scale: float) -> RkBlock | np.ndarray:
    if rk.rank == 0:
        return rk
    qu, ru = np.linalg.qr(rk.left)
    qv, rv = np.linalg.qr(rk.right)
    piece = compress(ru @ rv.T, spec, scale=scale)
    if isinstance(piece, RkBlock):
        return RkBlock(qu @ piece.left, qv @ piece.right)
    return (qu @ piece) @ qv.T


def frobenius(bm: BlockMatrix) -> float:
    """Frobenius norm of a block matrix without densifying factored blocks."""
    total = 0.0
    for b in bm._walk():
        if b.kind == "dense":
            total += float(np.sum(b.payload**2))
        else:
            gram = (b.payload.left.T @ b.payload.left) @ (b.payload.right.T @ b.payload.right)
            total += float(np.trace(gram))
    return np.sqrt(max(total, 0.0))


def _check_conforming(a: BlockMatrix, b: BlockMatrix):
    if a.shape != b.shape or not np.array_equal(a.layout.row_ids, b.layout.row_ids) \
            or not np.array_equal(a.layout.col_ids, b.layout.col_ids):
        raise UsageError("block matrices do not have conforming layouts")


def add(a: BlockMatrix, b: BlockMatrix) -> BlockMatrix:
    """Blockwise sum, re-truncated to the layout's tolerance."""
    _check_conforming(a, b)
    spec = a.layout.spec
    scale = max(frobenius(a), frobenius(b))

    def rec(ba, bb):
        if ba.kind != bb.kind:
            raise UsageError("block structures do not match")
        if ba.kind == "split":
            return Block(ba.rows, ba.cols, "split",
                         children=[rec(x, y) for x, y in zip(ba.children, bb.children)])
        if ba.kind == "dense":
            return Block(ba.rows, ba.cols, "dense", payload=ba.payload + bb.payload)
        joined = RkBlock(
            np.hstack([ba.payload.left, bb.payload.left]),
            np.hstack([ba.payload.right, bb.payload.right]),
        )
        out = _retruncate_rk(joined, spec, scale)
        if isinstance(out, RkBlock):
            return Block(ba.rows, ba.cols, "rk", payload=out)
        return Block(ba.rows, ba.cols, "dense", payload=out)

    return BlockMatrix(a.layout, rec(a.root, b.root))


def multiply(a: BlockMatrix, b: BlockMatrix) -> BlockMatrix:
    """Product re-compressed over the (a rows, b cols) layout.

    The middle index sets must agree.  The product itself is formed densely;
    the full recursive block arithmetic is deliberately out of scope here.
    """
    if not np.array_equal(a.layout.col_ids, b.layout.row_ids):
        raise UsageError("inner index sets do not match")
    layout = BlockLayout(
        row_ids=a.layout.row_ids,
        col_ids=b.layout.col_ids,
        row_cluster=a.layout.row_cluster,
        col_cluster=b.layout.col_cluster,
        spec=a.layout.spec,
    )
    return BlockMatrix.from_dense(a.to_dense() @ b.to_dense(), layout)


def schur(a11: BlockMatrix, a12: BlockMatrix, a21: BlockMatrix, a22: np.ndarray) -> BlockMatrix:
    """a11 - a12 a22^{-1} a21 with a dense, directly factorizable a22 block."""
    if a22.shape[0] != a22.shape[1] or a22.shape[0] != a12.shape[1]:
        raise UsageError("a22 block has the wrong shape")
    x = np.linalg.solve(a22, a21.to_dense())
    dense = a11.to_dense() - a12.to_dense() @ x
    return BlockMatrix.from_dense(dense, a11.layout)
