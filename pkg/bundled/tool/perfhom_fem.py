# Licensed under the MIT License.
"""P1 assembly, constrained CG solves, norms, hole extension and boundary fluxes."""
from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Tuple

import attrs
import numpy as np
import scipy
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from packaging.version import Version

import perfhom_geometry as geometry
import perfhom_mesh as meshing
import perfhom_utils as utils

Coefficient = Callable[[np.ndarray, np.ndarray], np.ndarray]
PointFunction = Callable[[np.ndarray], np.ndarray]

DEFAULT_TOL = 1e-10
WEIGHTS = ("none", "lambda", "lambda2")
NORMS = ("L2", "H1-semi", "H1")

_TOL_KEYWORD = "rtol" if Version(scipy.__version__) >= Version("1.12") else "tol"
_GAUSS = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


class AssemblyError(utils.PerfhomError):
    """Assembly met non-finite coefficients or inconsistent constraints."""

    pass  # pylint: disable=unnecessary-pass


class NoConvergence(utils.PerfhomError):
    """CG hit its iteration cap."""

    def __init__(self, report: "SolverReport"):
        super().__init__(
            f"CG stopped after {report.iterations} iterations with relative residual "
            f"{report.residual:.3e} (tol {report.tol:.1e}, {report.unknowns} unknowns)"
        )
        self.report = report


class SingularSystem(utils.PerfhomError):
    """The constrained matrix has a zero diagonal entry."""

    pass  # pylint: disable=unnecessary-pass


class EmptyRegion(utils.PerfhomError):
    """No triangle centroid lies in the requested region."""

    pass  # pylint: disable=unnecessary-pass


class NotASolution(utils.PerfhomWarning):
    """Flux recovery was asked for a field that does not solve the discrete equation."""

    pass  # pylint: disable=unnecessary-pass


@attrs.define(frozen=True)
class SolverReport:
    iterations: int
    residual: float
    unknowns: int
    tol: float


def _as_float_array(value) -> np.ndarray:
    return np.asarray(value, dtype=float)


@attrs.define(frozen=True, eq=False)
class FemField:
    """Nodal values of a P1 function on a mesh."""

    mesh: meshing.TriMesh
    values: np.ndarray = attrs.field(converter=_as_float_array)
    report: Optional[SolverReport] = None

    @values.validator
    def _check_count(self, _attribute, value):
        if value.shape != (self.mesh.num_vertices,):
            raise ValueError(f"expected {self.mesh.num_vertices} nodal values, got shape {value.shape}")

    @property
    def gradients(self) -> np.ndarray:
        """Piecewise constant gradient per triangle, shape (nt, 2)."""
        return np.einsum("ta,tai->ti", self.values[self.mesh.triangles], self.mesh.gradients)

    def nodal_gradient(self, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Gradient lifted to the vertices by area-weighted averaging."""
        return self.mesh.lift(self.gradients, mask)

    def evaluate(self, points: np.ndarray, outside: str = "nan") -> np.ndarray:
        return self.mesh.interpolate(self.values, points, outside=outside)

    def with_values(self, values: np.ndarray) -> "FemField":
        return FemField(self.mesh, values)


def _empty_index() -> np.ndarray:
    return np.zeros(0, dtype=np.int64)


@attrs.define(frozen=True, eq=False)
class Constraints:
    """Dirichlet values, periodic identification, mean-zero normalization and active unknowns."""

    dirichlet_nodes: np.ndarray = attrs.field(factory=_empty_index, converter=lambda v: np.asarray(v, dtype=np.int64))
    dirichlet_values: np.ndarray = attrs.field(factory=lambda: np.zeros(0), converter=_as_float_array)
    periodic: bool = False
    mean_zero: bool = False
    mean_weights: Optional[np.ndarray] = None
    active: Optional[np.ndarray] = None


@attrs.define(frozen=True, eq=False)
class LinearSystem:
    """Unconstrained stiffness matrix and load; constraints are applied by `solve`."""

    mesh: meshing.TriMesh
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraints: Constraints = attrs.Factory(Constraints)

    @property
    def symmetry_error(self) -> float:
        scale = abs(self.matrix).max()
        if scale == 0:
            return 0.0
        return float(abs(self.matrix - self.matrix.T).max() / scale)


def constant_coefficient(matrix: Sequence[Sequence[float]]) -> Coefficient:
    """Coefficient callable returning the same matrix everywhere."""
    value = np.asarray(matrix, dtype=float)

    def _coefficient(points: np.ndarray, _regions: np.ndarray) -> np.ndarray:
        return np.broadcast_to(value, (len(points), 2, 2)).copy()

    return _coefficient


# **********************************************************
# Assembly.
# **********************************************************
def _evaluate_coefficient(mesh: meshing.TriMesh, coefficient: Coefficient) -> np.ndarray:
    values = np.asarray(coefficient(mesh.centroids, mesh.triangle_regions), dtype=float)
    if values.shape != (mesh.num_triangles, 2, 2):
        raise AssemblyError(f"coefficient returned shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise AssemblyError("coefficient has non-finite values")
    return values


def _scatter(mesh: meshing.TriMesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    size = mesh.num_vertices
    matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(size, size)).tocsr()
    return (0.5 * (matrix + matrix.T)).tocsr()


def stiffness_matrix(
    mesh: meshing.TriMesh, coefficient: Coefficient, mask: Optional[np.ndarray] = None
) -> sp.csr_matrix:
    """Weighted stiffness matrix; triangles outside `mask` contribute nothing."""
    values = _evaluate_coefficient(mesh, coefficient)
    grads = mesh.gradients
    areas = mesh.areas if mask is None else np.where(mask, mesh.areas, 0.0)
    local = areas[:, None, None] * np.einsum("tai,tij,tbj->tab", grads, values, grads)
    return _scatter(mesh, 0.5 * (local + local.transpose(0, 2, 1)))


def mass_matrix(mesh: meshing.TriMesh, mask: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Exact P1 mass matrix."""
    areas = mesh.areas if mask is None else np.where(mask, mesh.areas, 0.0)
    pattern = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, areas[:, None, None] * pattern[None, :, :])


def edge_midpoints(mesh: meshing.TriMesh) -> np.ndarray:
    """Midpoints of the edges (0,1), (1,2), (2,0) of every triangle, shape (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    return 0.5 * (p + np.roll(p, -1, axis=1))


def source_load(mesh: meshing.TriMesh, source: PointFunction, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Load vector of a source function by the 3-point edge-midpoint rule."""
    mids = edge_midpoints(mesh)
    values = np.asarray(source(mids.reshape(-1, 2)), dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(values)):
        raise AssemblyError("source has non-finite values")
    areas = mesh.areas if mask is None else np.where(mask, mesh.areas, 0.0)
    local = areas[:, None] / 6.0 * (values + np.roll(values, 1, axis=1))
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.num_vertices)


def flux_load(mesh: meshing.TriMesh, flux: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Load -int F . grad(phi_a) of a piecewise constant vector field F."""
    areas = mesh.areas if mask is None else np.where(mask, mesh.areas, 0.0)
    local = -areas[:, None] * np.einsum("ti,tai->ta", flux, mesh.gradients)
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.num_vertices)


def assemble(
    mesh: meshing.TriMesh,
    coefficient: Coefficient,
    source: Optional[PointFunction] = None,
    constraints: Optional[Constraints] = None,
    *,
    flux: Optional[np.ndarray] = None,
    load: Optional[np.ndarray] = None,
    mask: Optional[np.ndarray] = None,
) -> LinearSystem:
    """Assembles int C grad u . grad v = int f v - int F . grad v (+ load).

    The coefficient is sampled once per triangle at its centroid; meshes
    conform to every coefficient interface.
    """
    matrix = stiffness_matrix(mesh, coefficient, mask)
    rhs = np.zeros(mesh.num_vertices)
    if source is not None:
        rhs += source_load(mesh, source, mask)
    if flux is not None:
        rhs += flux_load(mesh, np.asarray(flux, dtype=float), mask)
    if load is not None:
        rhs += np.asarray(load, dtype=float)
    return LinearSystem(mesh=mesh, matrix=matrix, rhs=rhs, constraints=constraints or Constraints())


# **********************************************************
# Solvers.
# **********************************************************
def solve_linear(
    matrix: sp.spmatrix, rhs: np.ndarray, tol: float = DEFAULT_TOL, maxiter: Optional[int] = None
) -> Tuple[np.ndarray, SolverReport]:
    """Jacobi-preconditioned CG with relative residual tolerance `tol`."""
    size = rhs.shape[0]
    if size == 0:
        return np.zeros(0), SolverReport(0, 0.0, 0, tol)
    diagonal = matrix.diagonal()
    bad = diagonal <= 0
    if bad.any():
        raise SingularSystem(f"{int(bad.sum())} unknown(s) have a non-positive diagonal")
    norm_b = float(np.linalg.norm(rhs))
    if norm_b == 0:
        return np.zeros(size), SolverReport(0, 0.0, size, tol)

    cap = maxiter or int(50 * math.sqrt(size)) + 1000
    preconditioner = spla.LinearOperator(
        (size, size), matvec=lambda v: np.ravel(v) / diagonal, dtype=float
    )
    iterations = 0

    def _count(_xk):
        nonlocal iterations
        iterations += 1

    solution, info = spla.cg(
        matrix, rhs, M=preconditioner, maxiter=cap, callback=_count, atol=0.0, **{_TOL_KEYWORD: tol}
    )
    residual = float(np.linalg.norm(rhs - matrix @ solution) / norm_b)
    report = SolverReport(iterations=iterations, residual=residual, unknowns=size, tol=tol)
    if info != 0:
        raise NoConvergence(report)
    utils.log_to_output(f"CG: {size} unknowns, {iterations} iterations, residual {residual:.2e}")
    return solution, report


def _prolongation(mesh: meshing.TriMesh, constraints: Constraints) -> sp.csr_matrix:
    size = mesh.num_vertices
    active = np.ones(size, dtype=bool) if constraints.active is None else np.asarray(constraints.active, dtype=bool)
    if constraints.periodic:
        if mesh.periodic_master is None:
            raise AssemblyError("periodic constraints need a periodic mesh")
        master = mesh.periodic_master
    else:
        master = np.arange(size)
    free = active.copy()
    free[constraints.dirichlet_nodes] = False
    roots = np.unique(master[free])
    if not np.all(free[roots]):
        raise AssemblyError("a periodic master vertex is constrained or inactive")
    column = np.full(size, -1, dtype=np.int64)
    column[roots] = np.arange(len(roots))
    rows = np.flatnonzero(free)
    return sp.csr_matrix((np.ones(len(rows)), (rows, column[master[rows]])), shape=(size, len(roots)))


def solve(system: LinearSystem, tol: float = DEFAULT_TOL) -> FemField:
    """Solves the constrained system.

    Mean-zero problems pin one unknown, solve, and shift the result by the
    weighted mean; on a connected active set this equals the Lagrange
    constrained solution.
    """
    mesh, constraints = system.mesh, system.constraints
    prolong = _prolongation(mesh, constraints)
    fixed = np.zeros(mesh.num_vertices)
    fixed[constraints.dirichlet_nodes] = constraints.dirichlet_values
    rhs = prolong.T @ (system.rhs - system.matrix @ fixed)
    reduced = (prolong.T @ system.matrix @ prolong).tocsr()
    pinned = constraints.mean_zero and reduced.shape[0] > 0
    if pinned:
        reduced, rhs = reduced[1:, 1:], rhs[1:]
    solution, report = solve_linear(reduced, rhs, tol)
    if pinned:
        solution = np.concatenate([[0.0], solution])
    values = prolong @ solution + fixed
    if constraints.mean_zero:
        active = (
            np.ones(mesh.num_vertices, dtype=bool)
            if constraints.active is None
            else np.asarray(constraints.active, dtype=bool)
        )
        weights = mesh.lumped_mass() if constraints.mean_weights is None else constraints.mean_weights
        weights = np.where(active, weights, 0.0)
        values[active] -= float(weights @ values) / float(weights.sum())
    return FemField(mesh, values, report)


# **********************************************************
# Norms.
# **********************************************************
def element_l2_squared(mesh: meshing.TriMesh, values: np.ndarray) -> np.ndarray:
    """Exact integral of u^2 over each triangle."""
    u = np.asarray(values)[mesh.triangles]
    return mesh.areas / 12.0 * (np.sum(u * u, axis=1) + np.sum(u, axis=1) ** 2)


def region_norm(
    field: FemField,
    region=None,
    weight: str = "none",
    what: str = "L2",
    delta: float = 1.0,
    mask: Optional[np.ndarray] = None,
) -> float:
    """L2, H1-semi or H1 norm over triangles whose centroid lies in `region`.

    `weight` multiplies the integrand by 1, Lambda_delta^2 or Lambda_delta^4
    (norm of Lambda u, of Lambda^2 u respectively).
    """
    if weight not in WEIGHTS or what not in NORMS:
        raise ValueError(f"unknown weight {weight!r} or norm {what!r}")
    mesh = field.mesh
    selected = np.ones(mesh.num_triangles, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if region is not None:
        selected &= region.contains(mesh.centroids)
    if not selected.any():
        raise EmptyRegion("no triangle centroid lies in the region")
    contrast = np.where(mesh.omega_triangles, 1.0, delta)
    factor = {"none": np.ones_like(contrast), "lambda": contrast, "lambda2": contrast**2}[weight]
    integrand = np.zeros(mesh.num_triangles)
    if what in ("L2", "H1"):
        integrand += element_l2_squared(mesh, field.values)
    if what in ("H1-semi", "H1"):
        integrand += np.sum(field.gradients**2, axis=1) * mesh.areas
    return float(math.sqrt(np.sum((factor**2 * integrand)[selected])))


def error_norms(
    field: FemField, exact: PointFunction, exact_gradient: PointFunction
) -> Tuple[float, float]:
    """L2 and H1-semi errors against an exact solution, by the edge-midpoint rule."""
    mesh = field.mesh
    mids = edge_midpoints(mesh).reshape(-1, 2)
    u = field.values[mesh.triangles]
    uh = 0.5 * (u + np.roll(u, -1, axis=1))
    l2 = (uh - np.asarray(exact(mids)).reshape(-1, 3)) ** 2
    grad_exact = np.asarray(exact_gradient(mids)).reshape(-1, 3, 2)
    h1 = np.sum((field.gradients[:, None, :] - grad_exact) ** 2, axis=2)
    weight = mesh.areas[:, None] / 3.0
    return float(math.sqrt(np.sum(weight * l2))), float(math.sqrt(np.sum(weight * h1)))


# **********************************************************
# Extension into holes.
# **********************************************************
def extend_into_holes(
    field: FemField,
    material: geometry.MaterialTensor,
    epsilon: Optional[float] = None,
    *,
    source_direction: Optional[int] = None,
    tol: float = DEFAULT_TOL,
) -> FemField:
    """Replaces hole-interior values by the A-harmonic extension of the hole-boundary trace.

    With `source_direction` j the extension solves
    -div(A grad u) = div(A e_j) instead, as the corrector equation does.
    """
    mesh = field.mesh
    interior = mesh.hole_interior_vertices
    if not interior.any():
        return field
    hole_triangles = ~mesh.omega_triangles
    coefficient = geometry.CoefficientField(material, 1.0, epsilon)
    flux = None
    if source_direction is not None:
        flux = coefficient(mesh.centroids, mesh.triangle_regions)[:, :, source_direction]
    boundary = np.flatnonzero(mesh.hole_vertices & mesh.omega_vertices)
    constraints = Constraints(
        dirichlet_nodes=boundary,
        dirichlet_values=field.values[boundary],
        active=mesh.hole_vertices,
    )
    system = assemble(mesh, coefficient, constraints=constraints, flux=flux, mask=hole_triangles)
    extended = solve(system, tol)
    values = field.values.copy()
    values[interior] = extended.values[interior]
    return FemField(mesh, values, field.report)


def hole_extension_ratios(field: FemField, holes: Sequence[geometry.Hole], width: float) -> np.ndarray:
    """Per hole: ||grad u|| on the hole over ||grad u|| on the surrounding annulus of `width`."""
    mesh = field.mesh
    energy = np.sum(field.gradients**2, axis=1) * mesh.areas
    ratios = []
    for region in sorted(mesh.hole_boundary_groups):
        hole = holes[region]
        inside = energy[mesh.triangle_regions == region].sum()
        near = np.array(
            mesh.centroid_tree.query_ball_point(hole.center, 0.5 * hole.diameter + width), dtype=np.int64
        )
        near = near[mesh.omega_triangles[near]]
        ring = near[hole.distance(mesh.centroids[near]) < width]
        outside = energy[ring].sum()
        ratios.append(math.sqrt(inside / outside) if outside > 0 else (0.0 if inside == 0 else math.inf))
    return np.array(ratios)


def caccioppoli_ratio(field: FemField, delta: float, center: Sequence[float], radius: float) -> float:
    """int |Lambda grad((u - c) phi)|^2 over int Lambda^2 |u - c|^2 |grad phi|^2.

    phi is the piecewise linear cutoff equal to 1 on B(center, r) and 0 off
    B(center, 2r); c is the Lambda^2-weighted mean of u on B(center, 2r).
    """
    mesh = field.mesh
    distance = np.linalg.norm(mesh.vertices - np.asarray(center, dtype=float), axis=1)
    phi = FemField(mesh, np.clip(2.0 - distance / radius, 0.0, 1.0))
    contrast2 = np.where(mesh.omega_triangles, 1.0, delta**2)
    ball = np.linalg.norm(mesh.centroids - np.asarray(center, dtype=float), axis=1) < 2.0 * radius
    weights = contrast2 * mesh.areas * ball
    if weights.sum() == 0:
        raise EmptyRegion("Caccioppoli ball contains no triangle")
    mean = float(np.sum(weights * field.values[mesh.triangles].mean(axis=1)) / weights.sum())
    shifted = field.values - mean
    product = FemField(mesh, shifted * phi.values)
    lhs = np.sum(contrast2 * np.sum(product.gradients**2, axis=1) * mesh.areas)
    rhs = np.sum(contrast2 * element_l2_squared(mesh, shifted) * np.sum(phi.gradients**2, axis=1))
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return float(lhs / rhs)


# **********************************************************
# Boundary functions, traces and conormal fluxes.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class BoundaryFunction:
    """Piecewise linear function on the outer boundary loop.

    values[i] holds the two endpoint values on loop edge i, so jumps at
    corners are representable.
    """

    mesh: meshing.TriMesh
    values: np.ndarray

    @classmethod
    def from_nodal(cls, mesh: meshing.TriMesh, loop_values: np.ndarray) -> "BoundaryFunction":
        loop_values = np.asarray(loop_values, dtype=float)
        return cls(mesh, np.column_stack([loop_values, np.roll(loop_values, -1)]))

    @classmethod
    def from_edgewise(cls, mesh: meshing.TriMesh, edge_values: np.ndarray) -> "BoundaryFunction":
        edge_values = np.asarray(edge_values, dtype=float)
        return cls(mesh, np.column_stack([edge_values, edge_values]))

    @property
    def lengths(self) -> np.ndarray:
        return self.mesh.loop_lengths

    def midpoint_values(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def integral(self) -> float:
        return float(np.sum(self.lengths * self.values.mean(axis=1)))

    def l2_norm(self) -> float:
        a, b = self.values[:, 0], self.values[:, 1]
        return float(math.sqrt(np.sum(self.lengths / 3.0 * (a * a + a * b + b * b))))

    def __sub__(self, other: "BoundaryFunction") -> "BoundaryFunction":
        return BoundaryFunction(self.mesh, self.values - other.values)


def boundary_trace(field: FemField) -> BoundaryFunction:
    return BoundaryFunction.from_nodal(field.mesh, field.values[field.mesh.boundary_loop])


def sample_boundary(mesh: meshing.TriMesh, function: PointFunction) -> BoundaryFunction:
    """Nodal interpolant of a function on the boundary loop."""
    points = mesh.vertices[mesh.boundary_loop]
    return BoundaryFunction.from_nodal(mesh, np.asarray(function(points), dtype=float))


def tangential_gradient(trace: BoundaryFunction) -> BoundaryFunction:
    """Arclength derivative per boundary edge, counterclockwise orientation."""
    return BoundaryFunction.from_edgewise(
        trace.mesh, (trace.values[:, 1] - trace.values[:, 0]) / trace.lengths
    )


def boundary_load(
    mesh: meshing.TriMesh,
    function: Callable[[np.ndarray, np.ndarray], np.ndarray],
    project_mean: bool = False,
) -> Tuple[np.ndarray, float]:
    """Load vector of boundary data g(points, normals) by 2-point Gauss per edge.

    Returns the load and the raw boundary integral of g. With
    `project_mean` the boundary mean is removed first.
    """
    edges = mesh.loop_edges
    start, end = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
    lengths, normals = mesh.loop_lengths, mesh.loop_normals
    samples = [np.asarray(function(start + s * (end - start), normals), dtype=float) for s in _GAUSS]
    raw = float(np.sum(lengths * 0.5 * (samples[0] + samples[1])))
    if project_mean:
        mean = raw / lengths.sum()
        samples = [values - mean for values in samples]
    at_start = lengths * 0.5 * sum((1.0 - s) * values for s, values in zip(_GAUSS, samples))
    at_end = lengths * 0.5 * sum(s * values for s, values in zip(_GAUSS, samples))
    size = mesh.num_vertices
    load = np.bincount(edges[:, 0], weights=at_start, minlength=size) + np.bincount(
        edges[:, 1], weights=at_end, minlength=size
    )
    return load, raw


@attrs.define(frozen=True, eq=False)
class ConormalFlux:
    """Recovered conormal derivative on the outer boundary."""

    density: BoundaryFunction
    nodal: np.ndarray
    interior_residual: float

    @property
    def total(self) -> float:
        """Discrete total flux: the sum of the boundary residuals."""
        return float(self.nodal.sum())

    def l2_norm(self) -> float:
        return self.density.l2_norm()


def _extrapolate(arclength: np.ndarray, values: np.ndarray) -> float:
    if len(values) < 2:
        return float(values[0])
    slope = (values[0] - values[1]) / (arclength[1] - arclength[0])
    return float(values[0] + slope * arclength[0])


def _face_density(residual: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Lumped density along one straight face, corners extrapolated."""
    span = len(lengths)
    density = np.zeros(span + 1)
    if span == 1:
        density[:] = (residual[0] + residual[1]) / lengths[0]
        return density
    inner = np.arange(1, span)
    density[inner] = residual[inner] / (0.5 * (lengths[inner - 1] + lengths[inner]))
    arclength = np.concatenate([[0.0], np.cumsum(lengths)])
    head = np.arange(1, min(3, span))
    tail = np.arange(span - 1, max(0, span - 3), -1)
    density[0] = _extrapolate(arclength[head], density[head])
    density[-1] = _extrapolate(arclength[-1] - arclength[tail], density[tail])
    return density


def conormal_flux(
    field: FemField,
    material: geometry.MaterialTensor,
    epsilon: Optional[float],
    delta: float,
    source: Optional[PointFunction] = None,
    threshold: float = 1e-6,
) -> ConormalFlux:
    """Variational conormal flux n . A grad u on the outer boundary.

    Boundary residuals r = K u - b are the fluxes tested against boundary
    hats; they are turned into a density face by face.
    """
    mesh = field.mesh
    coefficient = geometry.CoefficientField(material, delta, epsilon)
    system = assemble(mesh, coefficient, source=source)
    residual = system.matrix @ field.values - system.rhs
    loop = mesh.boundary_loop
    on_loop = np.zeros(mesh.num_vertices, dtype=bool)
    on_loop[loop] = True
    scale = max(1.0, float(np.max(np.abs(residual[loop]))))
    interior = float(np.max(np.abs(residual[~on_loop]), initial=0.0))
    if interior > threshold * scale:
        utils.warn(NotASolution, f"interior residual {interior:.3e} exceeds {threshold:.0e}; flux is not meaningful")

    r_loop = residual[loop]
    lengths = mesh.loop_lengths
    size = len(loop)
    values = np.zeros((size, 2))
    corners = mesh.loop_corners
    if len(corners) == 0:
        density = r_loop / (0.5 * (lengths + np.roll(lengths, 1)))
        values = np.column_stack([density, np.roll(density, -1)])
    else:
        for index, corner in enumerate(corners):
            span = (corners[(index + 1) % len(corners)] - corner) % size or size
            positions = (corner + np.arange(span + 1)) % size
            edge_ids = positions[:-1]
            density = _face_density(r_loop[positions], lengths[edge_ids])
            values[edge_ids, 0] = density[:-1]
            values[edge_ids, 1] = density[1:]
    return ConormalFlux(density=BoundaryFunction(mesh, values), nodal=r_loop, interior_residual=interior)
