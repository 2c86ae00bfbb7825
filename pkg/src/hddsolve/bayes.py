"""Bayesian inversion driver.

The diffusion coefficient is parametrized as kappa(x, z) = exp(sum_i z_i
psi_i(x)) with indicator basis functions on a partition aligned with the
decomposition tree, so kappa stays positive and piecewise constant per
triangle for any parameter vector.  Observations are functionals of the
solution (subdomain means, nodal values) evaluated through the bottom-up
functional recursion; the likelihood is a product of independent Gaussians.
All probability arithmetic is done in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import oracle
from .ddtree import DDTree
from .errors import ConfigError, NumericalError, UsageError
from .fem import CoefficientField
from .functionals import FunctionalTracker, NodeMeanRequest, PointRequest
from .hdd import SolveMode, leaves_to_root, root_to_leaves
from .mesh import Rect


def aligned_partition(count: int):
    """Split the unit square into `count` rectangles by the same alternating
    bisection the tree uses (count must be a power of two)."""
    if count < 1 or count & (count - 1):
        raise ConfigError(f"partition size must be a power of two, got {count}")
    rects = [Rect(0.0, 1.0, 0.0, 1.0)]
    depth = 0
    while len(rects) < count:
        nxt = []
        for r in rects:
            if depth % 2 == 0:
                mid = 0.5 * (r.x0 + r.x1)
                nxt += [Rect(r.x0, mid, r.y0, r.y1), Rect(mid, r.x1, r.y0, r.y1)]
            else:
                mid = 0.5 * (r.y0 + r.y1)
                nxt += [Rect(r.x0, r.x1, r.y0, mid), Rect(r.x0, r.x1, mid, r.y1)]
        rects = nxt
        depth += 1
    return rects


@dataclass(frozen=True)
class ParamField:
    """Log-coefficient parametrization over an indicator partition."""

    n_z: int
    regions: tuple
    triangle_region: np.ndarray   # region index per triangle

    @classmethod
    def build(cls, tree: DDTree, n_z: int) -> "ParamField":
        regions = aligned_partition(n_z)
        cent = tree.mesh.nodes[tree.mesh.triangles].mean(axis=1)
        owner = np.full(tree.mesh.n_triangles, -1)
        for k, r in enumerate(regions):
            inside = (
                (cent[:, 0] >= r.x0) & (cent[:, 0] <= r.x1)
                & (cent[:, 1] >= r.y0) & (cent[:, 1] <= r.y1)
            )
            owner[inside & (owner < 0)] = k
        if (owner < 0).any():
            raise ConfigError("partition does not cover the mesh")
        return cls(n_z=n_z, regions=tuple(regions), triangle_region=owner)

    def kappa(self, z) -> CoefficientField:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_z,):
            raise ConfigError(f"parameter vector must have length {self.n_z}")
        return CoefficientField(np.exp(z[self.triangle_region]))


@dataclass(frozen=True)
class Prior:
    """Independent per-component prior, each standard normal or uniform."""

    components: tuple   # entries ("normal",) or ("uniform", a, b)

    @classmethod
    def normal(cls, n_z):
        return cls(tuple(("normal",) for _ in range(n_z)))

    @classmethod
    def uniform(cls, n_z, a, b):
        if not a < b:
            raise ConfigError("uniform prior requires a < b")
        return cls(tuple(("uniform", float(a), float(b)) for _ in range(n_z)))

    @property
    def n_z(self):
        return len(self.components)

    def log_pdf(self, z) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        total = 0.0
        for zi, comp in zip(z, self.components):
            if comp[0] == "normal":
                total += -0.5 * zi * zi - 0.5 * math.log(2.0 * math.pi)
            else:
                _, a, b = comp
                if zi < a or zi > b:
                    return -np.inf
                total += -math.log(b - a)
        return total

    def sample(self, rng, size=None):
        cols = []
        for comp in self.components:
            if comp[0] == "normal":
                cols.append(rng.standard_normal(size))
            else:
                cols.append(rng.uniform(comp[1], comp[2], size))
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class MeasurementModel:
    """Observation functionals, noise levels, and observed data."""

    observations: tuple          # entries ("mean", node_id) or ("point", node_index)
    sigma: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (len(self.observations),) or not np.all(sigma > 0):
            raise ConfigError("one positive noise level per observation required")
        object.__setattr__(self, "sigma", sigma)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.shape != sigma.shape:
                raise ConfigError("data vector length must match the observations")
            object.__setattr__(self, "y", y)

    @property
    def n_y(self):
        return len(self.observations)

    def with_data(self, y):
        return MeasurementModel(self.observations, self.sigma, np.asarray(y, dtype=float))


def mean_observations(tree: DDTree, depth: int):
    """One subdomain-mean observation per tree node at the given depth."""
    return tuple(("mean", nd.id) for nd in tree.nodes_at_depth(depth))


@dataclass
class BayesProblem:
    """Forward setup shared by every likelihood evaluation."""

    tree: DDTree
    param: ParamField
    f: np.ndarray                 # right-hand side over all mesh nodes
    g: np.ndarray                 # Dirichlet data over the boundary set
    model: MeasurementModel
    compression: object = None
    threads: int = 1
    forward_calls: int = field(default=0)

    def _requests(self):
        reqs = []
        for kind, ident in self.model.observations:
            if kind == "mean":
                reqs.append(NodeMeanRequest(ident))
            elif kind == "point":
                reqs.append(PointRequest(ident))
            else:
                raise ConfigError(f"unknown observation kind {kind!r}")
        return reqs


def forward_functionals(problem: BayesProblem, z) -> np.ndarray:
    """Observation vector S(z) via the functional recursion; the solution
    itself is never assembled."""
    kappa = problem.param.kappa(z)
    tracker = FunctionalTracker(problem.tree, problem._requests())
    store = leaves_to_root(
        problem.tree, kappa, SolveMode.functionals_only(),
        compression=problem.compression, threads=problem.threads, tracker=tracker,
    )
    if store.solution_allocations != 0:
        raise NumericalError("functional path materialized a solution vector")
    problem.forward_calls += 1
    out = np.empty(problem.model.n_y)
    for k, (kind, ident) in enumerate(problem.model.observations):
        key = ("mean", ident) if kind == "mean" else ("point", ident)
        out[k] = store.functionals[key].evaluate(problem.f, problem.g)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite forward observation at z={z}")
    return out


def forward_full_solve(problem: BayesProblem, z) -> np.ndarray:
    """Observation vector via a full solve plus the per-triangle mean rule;
    the comparison route for the likelihood equivalence checks."""
    kappa = problem.param.kappa(z)
    store = leaves_to_root(problem.tree, kappa, SolveMode.keep_all(),
                           compression=problem.compression, threads=problem.threads)
    u = root_to_leaves(store, problem.f, problem.g)
    return observe_solution(problem.tree, u, problem.model)


def observe_solution(tree: DDTree, u, model: MeasurementModel) -> np.ndarray:
    """Apply the observation operators to an assembled solution vector."""
    out = np.empty(model.n_y)
    for k, (kind, ident) in enumerate(model.observations):
        if kind == "mean":
            out[k] = oracle.direct_mean(tree.mesh, u, tree.nodes[ident].rect)
        else:
            out[k] = u[ident]
    return out


def gaussian_log_likelihood(y, s, sigma) -> float:
    resid = (np.asarray(y) - np.asarray(s)) / sigma
    return float(-0.5 * np.sum(resid**2) - np.sum(np.log(sigma * math.sqrt(2.0 * math.pi))))


def log_likelihood(problem: BayesProblem, z, forward=forward_functionals) -> float:
    if problem.model.y is None:
        raise UsageError("measurement model carries no data")
    s = forward(problem, z)
    return gaussian_log_likelihood(problem.model.y, s, problem.model.sigma)


def synthesize_data(problem: BayesProblem, z_true, noise_rel, seed):
    """Observed data from the oracle solver plus seeded Gaussian noise.

    The truth is always generated by the direct solver, never by the engine
    under test.  The noise level is noise_rel times the spread of the clean
    observation vector (or its magnitude if the spread degenerates).
    Returns the model with data attached.
    """
    kappa = problem.param.kappa(np.asarray(z_true, dtype=float))
    u = oracle.direct_solve(problem.tree.mesh, kappa, problem.f, problem.g)
    clean = observe_solution(problem.tree, u, problem.model)
    spread = float(np.max(clean) - np.min(clean))
    if spread <= 0:
        spread = max(float(np.max(np.abs(clean))), 1.0)
    sigma = np.full(clean.size, noise_rel * spread)
    rng = np.random.default_rng(seed)
    y = clean + rng.normal(0.0, sigma)
    return MeasurementModel(problem.model.observations, sigma, y)


@dataclass(frozen=True)
class GridSpec:
    lo: tuple
    hi: tuple
    n: tuple

    def axes(self):
        return [np.linspace(l, h, k) for l, h, k in zip(self.lo, self.hi, self.n)]


@dataclass(frozen=True)
class ChainSpec:
    length: int = 4000
    burn: int = 1000
    proposal: float = 0.15
    seed: int = 0


@dataclass
class PosteriorResult:
    points: np.ndarray            # (N, n_z) grid points or chain samples
    log_prior: np.ndarray
    log_like: np.ndarray
    log_post: np.ndarray          # normalized on grids, unnormalized for chains
    log_evidence: float | None = None
    mode: np.ndarray | None = None
    weights: np.ndarray | None = None
    acceptance: float | None = None
    accepted: np.ndarray | None = None

    @property
    def integral(self):
        if self.weights is None:
            return None
        return float(np.sum(np.exp(self.log_post) * self.weights))

    def posterior_mean(self):
        return self.points.mean(axis=0)

    def posterior_std(self):
        return self.points.std(axis=0)


def _trapezoid_weights(axis):
    w = np.full(axis.size, axis[1] - axis[0]) if axis.size > 1 else np.ones(1)
    if axis.size > 1:
        w[0] *= 0.5
        w[-1] *= 0.5
    return w


def posterior_grid(problem: BayesProblem, prior: Prior, grid: GridSpec) -> PosteriorResult:
    """Tensor-grid posterior for one or two parameters.

    The evidence is a trapezoidal quadrature computed in log space; the
    returned log density is normalized so the same quadrature integrates it
    to one.
    """
    n_z = prior.n_z
    if n_z > 2:
        raise UsageError("grid posteriors support at most two parameters")
    if len(grid.lo) != n_z or len(grid.hi) != n_z or len(grid.n) != n_z:
        raise ConfigError("grid spec dimensions do not match the prior")
    axes = grid.axes()
    if n_z == 1:
        points = axes[0][:, None]
        weights = _trapezoid_weights(axes[0])
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        points = np.column_stack([xx.ravel(), yy.ravel()])
        weights = np.outer(_trapezoid_weights(axes[0]), _trapezoid_weights(axes[1])).ravel()
    log_prior = np.array([prior.log_pdf(p) for p in points])
    log_like = np.array([log_likelihood(problem, p) for p in points])
    joint = log_prior + log_like
    log_evidence = float(logsumexp(joint, b=weights))
    log_post = joint - log_evidence
    mode = points[int(np.argmax(joint))].copy()
    return PosteriorResult(points=points, log_prior=log_prior, log_like=log_like,
                           log_post=log_post, log_evidence=log_evidence, mode=mode,
                           weights=weights)


def posterior_mcmc(problem: BayesProblem, prior: Prior, chain: ChainSpec) -> PosteriorResult:
    """Random-walk Metropolis chain targeting likelihood times prior."""
    if prior.n_z > 4:
        raise UsageError("random-walk chains support at most four parameters")
    rng = np.random.default_rng(chain.seed)
    z = prior.sample(rng).reshape(prior.n_z)

    def log_target(zv):
        lp = prior.log_pdf(zv)
        if not np.isfinite(lp):
            return lp, lp
        ll = log_likelihood(problem, zv) if problem.model.n_y else 0.0
        return lp, lp + ll

    lp, lt = log_target(z)
    total = chain.burn + chain.length
    samples = np.empty((total, prior.n_z))
    log_posts = np.empty(total)
    log_priors = np.empty(total)
    accepted = np.zeros(total, dtype=bool)
    n_accept = 0
    for it in range(total):
        prop = z + chain.proposal * rng.standard_normal(prior.n_z)
        lp_p, lt_p = log_target(prop)
        if np.log(rng.uniform()) < lt_p - lt:
            z, lp, lt = prop, lp_p, lt_p
            accepted[it] = True
            n_accept += 1
        samples[it] = z
        log_posts[it] = lt
        log_priors[it] = lp
    rate = n_accept / total
    if not 0.05 <= rate <= 0.95:
        import warnings

        warnings.warn(f"Metropolis acceptance rate {rate:.3f} outside [0.05, 0.95]",
                      RuntimeWarning)
    keep = slice(chain.burn, None)
    return PosteriorResult(points=samples[keep], log_prior=log_priors[keep],
                           log_like=log_posts[keep] - log_priors[keep],
                           log_post=log_posts[keep], acceptance=rate,
                           accepted=accepted[keep])
