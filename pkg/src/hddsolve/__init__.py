"""Hierarchical domain decomposition solver for 2D elliptic problems.

Builds per-subdomain solution operators bottom-up by Schur complements,
evaluates solution functionals and Bayesian likelihoods without assembling
the full solution, and validates everything against a direct FEM oracle.
"""

from .ddtree import DDNode, DDTree, build_tree, dump_tree, gamma_split
from .errors import ConfigError, GeometryError, NumericalError, UsageError
from .fem import CoefficientField, assemble_global, local_load_matrix, local_stiffness
from .functionals import (
    Functional,
    FunctionalTracker,
    MeanRequest,
    NodeMeanRequest,
    PointRequest,
    leaf_mean_functional,
    mean_per_subdomain,
    point_functional,
)
from .hdd import (
    BuildDiagnostics,
    LocalData,
    MapStore,
    PhiMap,
    PsiMap,
    SolveMode,
    assemble_father,
    dump_store_stats,
    leaf_psi,
    leaves_to_root,
    matching_residuals,
    root_to_leaves,
    schur_eliminate,
    solve_subdomain,
)
from .lowrank import BlockMatrix, RkBlock, ToleranceSpec, block_partition, compress
from .mesh import Mesh, Rect, boundary_nodes, build_mesh, dump_mesh, interior_nodes
from .oracle import direct_mean, direct_schur, direct_solve

__version__ = "0.1.0"
