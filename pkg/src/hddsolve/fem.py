"""P1 finite-element local assembly.

Per-triangle stiffness uses constant hat-function gradients, so the integral
of kappa * grad(b_i) . grad(b_j) is exact for piecewise-constant kappa.  The
load matrix comes from the three-vertex quadrature rule and equals
(area/3) * identity on each triangle, which makes the assembled global load
matrix diagonal (a lumped mass matrix).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, GeometryError
from .mesh import Mesh

_DEGENERATE_AREA = 1e-14


@dataclass(frozen=True)
class CoefficientField:
    """Piecewise-constant diffusion coefficient, one value per triangle."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)) or not np.all(v > 0):
            raise ConfigError("coefficient values must be a 1-d array of positive finite reals")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "CoefficientField":
        return cls(np.full(mesh.n_triangles, float(value)))

    @classmethod
    def from_callable(cls, mesh: Mesh, fn) -> "CoefficientField":
        """Evaluate fn(x1, x2) at triangle centroids."""
        cent = mesh.nodes[mesh.triangles].mean(axis=1)
        return cls(np.asarray([fn(x, y) for x, y in cent], dtype=float))

    @classmethod
    def from_regions(cls, mesh: Mesh, rects, values) -> "CoefficientField":
        """Piecewise-constant per region; every triangle centroid must be covered."""
        if len(rects) != len(values):
            raise ConfigError("one value per region required")
        cent = mesh.nodes[mesh.triangles].mean(axis=1)
        out = np.full(mesh.n_triangles, np.nan)
        for rect, val in zip(rects, values):
            inside = (
                (cent[:, 0] >= rect.x0) & (cent[:, 0] <= rect.x1)
                & (cent[:, 1] >= rect.y0) & (cent[:, 1] <= rect.y1)
            )
            out[inside & np.isnan(out)] = val
        if np.isnan(out).any():
            raise ConfigError("regions do not cover the mesh")
        return cls(out)


def _gradients(coords):
    """Hat-function gradients and the signed doubled area of a triangle."""
    x, y = coords[:, 0], coords[:, 1]
    det = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
    g = np.array([
        [y[1] - y[2], x[2] - x[1]],
        [y[2] - y[0], x[0] - x[2]],
        [y[0] - y[1], x[1] - x[0]],
    ])
    return g, det


def local_stiffness(coords, kappa: float) -> np.ndarray:
    """3x3 stiffness of one triangle: kappa * area * G G^T with G the gradients."""
    coords = np.asarray(coords, dtype=float)
    g, det = _gradients(coords)
    if det <= _DEGENERATE_AREA:
        raise GeometryError("triangle is degenerate or negatively oriented")
    return (kappa / (2.0 * det)) * (g @ g.T)


def local_load_matrix(coords) -> np.ndarray:
    """3x3 load (quadrature) matrix of one triangle: (area/3) * identity."""
    coords = np.asarray(coords, dtype=float)
    _, det = _gradients(coords)
    if det <= _DEGENERATE_AREA:
        raise GeometryError("triangle is degenerate or negatively oriented")
    return (det / 6.0) * np.eye(3)


def assemble_global(mesh: Mesh, kappa: CoefficientField):
    """Global stiffness A and diagonal load matrix F (no boundary treatment).

    A has zero row sums; the Dirichlet rows are eliminated by the caller.
    """
    if kappa.values.size != mesh.n_triangles:
        raise ConfigError("coefficient field does not match the mesh")
    xy = mesh.nodes[mesh.triangles]                       # (nt, 3, 2)
    x, y = xy[:, :, 0], xy[:, :, 1]
    g = np.stack(
        [
            np.stack([y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]], axis=1),
            np.stack([y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]], axis=1),
            np.stack([y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]], axis=1),
        ],
        axis=1,
    )                                                     # (nt, 3, 2)
    det = 2.0 * mesh.triangle_areas
    a_loc = np.einsum("tik,tjk->tij", g, g) * (kappa.values / (2.0 * det))[:, None, None]

    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    a_glob = sp.coo_matrix((a_loc.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()

    diag = np.bincount(
        mesh.triangles.ravel(),
        weights=np.repeat(mesh.triangle_areas / 3.0, 3),
        minlength=mesh.n_nodes,
    )
    f_glob = sp.diags(diag).tocsr()
    return a_glob, f_glob


def cell_patterns(h: float):
    """Per-cell 4x4 stiffness patterns and load diagonal for the leaf cells.

    Cell nodes are ordered by global index: (i,j), (i+1,j), (i,j+1), (i+1,j+1).
    Returns (P1, P2, load_diag): the unit-kappa stiffness contributions of the
    two cell triangles and the diagonal of the cell load matrix.
    """
    a, b, c, d = (0.0, 0.0), (h, 0.0), (0.0, h), (h, h)
    tri1 = np.array([a, b, d])      # positions (0, 1, 3)
    tri2 = np.array([a, d, c])      # positions (0, 3, 2)
    p1 = np.zeros((4, 4))
    p2 = np.zeros((4, 4))
    i1 = np.array([0, 1, 3])
    i2 = np.array([0, 3, 2])
    p1[np.ix_(i1, i1)] = local_stiffness(tri1, 1.0)
    p2[np.ix_(i2, i2)] = local_stiffness(tri2, 1.0)
    load = np.zeros(4)
    load[i1] += h * h / 6.0
    load[i2] += h * h / 6.0
    return p1, p2, load
