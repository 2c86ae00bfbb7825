"""Structured triangulation of the unit square with index-set bookkeeping.

Nodes are ordered lexicographically by (x2, x1): node (i, j) on the grid has
global index j*m + i and coordinates (i*h, j*h) with h = 1/(m-1).  Every grid
cell is split into two right triangles along the same (lower-left to
upper-right) diagonal, so subdomain cuts along grid lines never cross a
triangle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError

MAX_LEVEL = 8


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, x, y, tol=1e-12):
        return (
            self.x0 - tol <= x <= self.x1 + tol
            and self.y0 - tol <= y <= self.y1 + tol
        )

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class Mesh:
    """Uniform right-triangle mesh of the unit square.

    level: refinement level L, m = 2^L + 1 nodes per side.
    nodes: (n, 2) coordinates, n = m^2.
    triangles: (nt, 3) vertex indices, counter-clockwise, nt = 2*(m-1)^2.
    triangle_areas: (nt,) areas, all equal to h^2/2.
    """

    level: int
    m: int
    nodes: np.ndarray
    triangles: np.ndarray
    triangle_areas: np.ndarray

    @property
    def h(self):
        return 1.0 / (self.m - 1)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def node_index(self, i, j):
        """Global index of the grid node in column i, row j."""
        return j * self.m + i

    def grid_coord(self, value):
        """Snap a coordinate to its integer grid line, or raise."""
        g = value * (self.m - 1)
        gi = int(round(g))
        if abs(g - gi) > 1e-9 or not (0 <= gi <= self.m - 1):
            raise GeometryError(f"coordinate {value} is not on the level-{self.level} grid")
        return gi

    def grid_rect(self, region: Rect):
        """Rectangle corners as integer grid indices (i0, i1, j0, j1)."""
        i0, i1 = self.grid_coord(region.x0), self.grid_coord(region.x1)
        j0, j1 = self.grid_coord(region.y0), self.grid_coord(region.y1)
        if i0 >= i1 or j0 >= j1:
            raise GeometryError(f"degenerate region {region}")
        return i0, i1, j0, j1


def build_mesh(level: int) -> Mesh:
    """Build the structured triangulation at the given refinement level."""
    if not isinstance(level, (int, np.integer)) or not (1 <= level <= MAX_LEVEL):
        raise ConfigError(f"mesh level must be an integer in [1, {MAX_LEVEL}], got {level!r}")
    m = 2**level + 1
    h = 1.0 / (m - 1)
    jj, ii = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    nodes = np.column_stack([ii.ravel() * h, jj.ravel() * h])

    # Cell (i, j) corners: a=(i,j) b=(i+1,j) c=(i,j+1) d=(i+1,j+1); the
    # diagonal a-d yields triangles (a, b, d) and (a, d, c), both CCW.
    ci, cj = np.meshgrid(np.arange(m - 1), np.arange(m - 1), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    a = cj * m + ci
    b = cj * m + ci + 1
    c = (cj + 1) * m + ci
    d = (cj + 1) * m + ci + 1
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, d])
    tris[1::2] = np.column_stack([a, d, c])
    areas = np.full(tris.shape[0], 0.5 * h * h)
    return Mesh(level=int(level), m=m, nodes=nodes, triangles=tris, triangle_areas=areas)


def region_nodes(mesh: Mesh, region: Rect) -> np.ndarray:
    """All node indices inside the closed region, sorted ascending."""
    i0, i1, j0, j1 = mesh.grid_rect(region)
    ii = np.arange(i0, i1 + 1)
    jj = np.arange(j0, j1 + 1)
    idx = (jj[:, None] * mesh.m + ii[None, :]).ravel()
    return np.sort(idx)


def boundary_nodes(mesh: Mesh, region: Rect) -> np.ndarray:
    """Node indices on the region's perimeter, sorted ascending."""
    i0, i1, j0, j1 = mesh.grid_rect(region)
    m = mesh.m
    ii = np.arange(i0, i1 + 1)
    jj = np.arange(j0 + 1, j1)
    edges = [
        j0 * m + ii,            # bottom
        j1 * m + ii,            # top
        jj * m + i0,            # left (corners excluded)
        jj * m + i1,            # right
    ]
    return np.sort(np.concatenate(edges))


def interior_nodes(mesh: Mesh, region: Rect) -> np.ndarray:
    """Nodes of the region that are not on its perimeter, sorted ascending."""
    i0, i1, j0, j1 = mesh.grid_rect(region)
    if i1 - i0 < 2 or j1 - j0 < 2:
        return np.empty(0, dtype=np.int64)
    ii = np.arange(i0 + 1, i1)
    jj = np.arange(j0 + 1, j1)
    idx = (jj[:, None] * mesh.m + ii[None, :]).ravel()
    return np.sort(idx)


def triangles_in_region(mesh: Mesh, region: Rect) -> np.ndarray:
    """Indices of triangles whose vertices all lie in the closed region."""
    i0, i1, j0, j1 = mesh.grid_rect(region)
    xy = mesh.nodes[mesh.triangles]          # (nt, 3, 2)
    h = mesh.h
    tol = 1e-12
    ok = (
        (xy[:, :, 0] >= i0 * h - tol).all(axis=1)
        & (xy[:, :, 0] <= i1 * h + tol).all(axis=1)
        & (xy[:, :, 1] >= j0 * h - tol).all(axis=1)
        & (xy[:, :, 1] <= j1 * h + tol).all(axis=1)
    )
    return np.flatnonzero(ok)


def dump_mesh(mesh: Mesh) -> str:
    """Plain-text dump: one `index x1 x2` line per node, then `v0 v1 v2` per triangle."""
    lines = []
    for k, (x, y) in enumerate(mesh.nodes):
        lines.append(f"{k} {x:.17g} {y:.17g}")
    for v0, v1, v2 in mesh.triangles:
        lines.append(f"{v0} {v1} {v2}")
    return "\n".join(lines) + "\n"
