"""Brute-force reference solvers used by the equivalence tests.

Everything here goes through the assembled global system: direct
factorization for the solve, explicit dense/sparse elimination for the Schur
complement, and the literal per-triangle quadrature formula for means.  None
of the tree recursion is shared with the engine under test.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GeometryError, NumericalError
from .fem import CoefficientField, assemble_global
from .mesh import Mesh, Rect, boundary_nodes, interior_nodes, triangles_in_region

_DENSE_LIMIT = 4000


def full_square(mesh: Mesh) -> Rect:
    return Rect(0.0, 1.0, 0.0, 1.0)


def direct_solve(mesh: Mesh, kappa: CoefficientField, f, g) -> np.ndarray:
    """Galerkin solution over all mesh nodes.

    f holds nodal right-hand-side values over all nodes, g the Dirichlet data
    over the sorted global boundary index set.
    """
    a_glob, f_glob = assemble_global(mesh, kappa)
    bnd = boundary_nodes(mesh, full_square(mesh))
    inner = interior_nodes(mesh, full_square(mesh))
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    rhs = (f_glob @ f)[inner] - a_glob[inner][:, bnd] @ g
    a_ii = a_glob[inner][:, inner]
    u = np.empty(mesh.n_nodes)
    u[bnd] = g
    try:
        if mesh.n_nodes <= _DENSE_LIMIT:
            u[inner] = np.linalg.solve(a_ii.toarray(), rhs)
        else:
            u[inner] = spla.splu(a_ii.tocsc()).solve(rhs)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise NumericalError(f"direct factorization failed: {exc}") from exc
    return u


def direct_schur(mesh: Mesh, kappa: CoefficientField, keep) -> np.ndarray:
    """Schur complement of the global stiffness matrix onto the kept nodes.

    Rows and columns of the result follow the order of `keep`.
    """
    a_glob, _ = assemble_global(mesh, kappa)
    keep = np.asarray(keep)
    elim = np.setdiff1d(np.arange(mesh.n_nodes), keep)
    a_kk = a_glob[keep][:, keep].toarray()
    if elim.size == 0:
        return a_kk
    a_ke = a_glob[keep][:, elim].toarray()
    a_ee = a_glob[elim][:, elim]
    try:
        if elim.size <= _DENSE_LIMIT:
            x = np.linalg.solve(a_ee.toarray(), a_ke.T)
        else:
            x = spla.splu(a_ee.tocsc()).solve(a_ke.T)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise NumericalError(f"eliminated block is singular: {exc}") from exc
    return a_kk - a_ke @ x


def direct_mean(mesh: Mesh, solution, region: Rect) -> float:
    """Mean of a P1 function over a grid-aligned region, by the exact
    per-triangle rule sum |t|/3 (u1+u2+u3) / |region|."""
    tris = triangles_in_region(mesh, region)
    if tris.size == 0:
        raise GeometryError("region contains no triangles")
    u = np.asarray(solution, dtype=float)
    vertex_sums = u[mesh.triangles[tris]].sum(axis=1)
    areas = mesh.triangle_areas[tris]
    return float((areas / 3.0 * vertex_sums).sum() / areas.sum())
