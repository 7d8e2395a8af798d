# Licensed under the MIT License.
"""Dirichlet, Neumann and Green problems for the high-contrast operator on perforated domains."""
from __future__ import annotations

import math
from typing import Callable, Dict, Optional, Sequence, Tuple

import attrs
import numpy as np

import perfhom_fem as fem
import perfhom_geometry as geometry
import perfhom_mesh as meshing
import perfhom_utils as utils

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
COMPATIBILITY_TOL = 1e-6

DataFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class GeometryMismatch(utils.PerfhomError):
    """Mesh and perforated domain do not describe the same geometry."""

    pass  # pylint: disable=unnecessary-pass


class SourceTooClose(utils.PerfhomError):
    """Green source lies within one mesh size of the boundary or of a hole."""

    pass  # pylint: disable=unnecessary-pass


class NonCompatibleData(utils.PerfhomWarning):
    """Neumann data did not integrate to zero and was projected."""

    pass  # pylint: disable=unnecessary-pass


# **********************************************************
# Boundary data.
# **********************************************************
@attrs.define(frozen=True)
class BoundaryData:
    """Boundary data g(points, normals); Dirichlet data ignores the normals."""

    kind: str = attrs.field(validator=attrs.validators.in_((DIRICHLET, NEUMANN)))
    function: DataFunction = attrs.field(eq=False)
    name: str = "custom"

    def __call__(self, points: np.ndarray, normals: np.ndarray) -> np.ndarray:
        return np.asarray(self.function(points, normals), dtype=float)


def _x1(p, _n):
    return p[:, 0]


def _sinusoidal(p, _n):
    return np.sin(2 * np.pi * p[:, 0]) + 0.5 * np.cos(2 * np.pi * p[:, 1])


def _piecewise(p, _n):
    return np.abs(p[:, 0] - 0.5)


def _quadratic(p, _n):
    return p[:, 0] * p[:, 1]


def _one(p, _n):
    return np.ones(len(p))


def _normal(_p, n):
    return n[:, 0]


def _cosine(p, n):
    return np.cos(2 * np.pi * p[:, 0]) * n[:, 1] + np.cos(2 * np.pi * p[:, 1]) * n[:, 0]


def _zero(p, _n):
    return np.zeros(len(p))


PRESETS: Dict[str, Tuple[str, DataFunction]] = {
    "affine": (DIRICHLET, _x1),
    "sinusoidal": (DIRICHLET, _sinusoidal),
    "piecewise": (DIRICHLET, _piecewise),
    "quadratic": (DIRICHLET, _quadratic),
    "constant": (DIRICHLET, _one),
    "normal": (NEUMANN, _normal),
    "cosine": (NEUMANN, _cosine),
    "zero": (NEUMANN, _zero),
}


def boundary_data(name: str) -> BoundaryData:
    """Named preset."""
    if name not in PRESETS:
        raise ValueError(f"unknown boundary data {name!r}; choose from {sorted(PRESETS)}")
    kind, function = PRESETS[name]
    return BoundaryData(kind=kind, function=function, name=name)


def vertex_normals(mesh: meshing.TriMesh) -> np.ndarray:
    normals = mesh.loop_normals + np.roll(mesh.loop_normals, 1, axis=0)
    return normals / np.linalg.norm(normals, axis=1)[:, None]


def sample_edgewise(mesh: meshing.TriMesh, data: BoundaryData) -> fem.BoundaryFunction:
    """Endpoint samples of the data on every boundary edge, using that edge's normal."""
    edges = mesh.loop_edges
    normals = mesh.loop_normals
    start = data(mesh.vertices[edges[:, 0]], normals)
    end = data(mesh.vertices[edges[:, 1]], normals)
    return fem.BoundaryFunction(mesh, np.column_stack([start, end]))


def boundary_h1_norm(trace: fem.BoundaryFunction) -> float:
    """Scale-invariant norm ||grad_tan f|| + ||f|| / diam on the boundary loop."""
    x0, y0, x1, y1 = trace.mesh.bounds
    diameter = math.hypot(x1 - x0, y1 - y0)
    return fem.tangential_gradient(trace).l2_norm() + trace.l2_norm() / diameter


# **********************************************************
# Boundary value problems.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class BvpSolution:
    field: fem.FemField
    domain: geometry.PerforatedDomain
    epsilon: float
    delta: float
    data: BoundaryData
    material: geometry.MaterialTensor
    system: fem.LinearSystem
    energies: Dict[str, float]
    data_norm: float
    energy_constant: float
    diagnostics: Dict[str, float] = attrs.Factory(dict)

    @property
    def kind(self) -> str:
        return self.data.kind

    @property
    def mesh(self) -> meshing.TriMesh:
        return self.field.mesh

    @property
    def coefficient(self) -> geometry.CoefficientField:
        return geometry.CoefficientField(self.material, self.delta, self.epsilon)


def check_geometry(domain: geometry.PerforatedDomain, mesh: meshing.TriMesh, epsilon: float) -> None:
    """Raises GeometryMismatch unless the mesh resolves this domain at this epsilon."""
    if abs(epsilon - domain.epsilon) > 1e-12:
        raise GeometryMismatch(f"epsilon={epsilon} but the domain has epsilon={domain.epsilon}")
    if mesh.epsilon is not None and abs(mesh.epsilon - domain.epsilon) > 1e-12:
        raise GeometryMismatch(f"mesh was tiled for epsilon={mesh.epsilon}")
    if not np.allclose(mesh.bounds, domain.omega.bounds, atol=1e-9):
        raise GeometryMismatch(f"mesh bounds {mesh.bounds} differ from Omega {domain.omega.bounds}")
    holes = len(mesh.hole_boundary_groups)
    if holes != len(domain.hole_instances):
        raise GeometryMismatch(f"mesh resolves {holes} holes, domain has {len(domain.hole_instances)}")
    if domain.hole_instances and mesh.h > 0.25 * epsilon * (1.0 + 1e-9):
        raise GeometryMismatch(f"h={mesh.h:.6g} exceeds epsilon/4")


def _energies(field: fem.FemField, delta: float) -> Dict[str, float]:
    omega = field.mesh.omega_triangles
    return {
        "lambda_grad": fem.region_norm(field, weight="lambda", what="H1-semi", delta=delta),
        "grad_perforated": fem.region_norm(field, what="H1-semi", mask=omega),
        "grad": fem.region_norm(field, what="H1-semi"),
        "l2": fem.region_norm(field, what="L2"),
    }


def _finish(
    field: fem.FemField,
    domain: geometry.PerforatedDomain,
    material: geometry.MaterialTensor,
    epsilon: float,
    delta: float,
    data: BoundaryData,
    system: fem.LinearSystem,
    data_norm: float,
    diagnostics: Dict[str, float],
) -> BvpSolution:
    if delta == 0:
        field = fem.extend_into_holes(field, material, epsilon)
    energies = _energies(field, delta)
    constant = energies["grad"] / data_norm if data_norm > 0 else math.nan
    if field.report is not None:
        diagnostics = {**diagnostics, "iterations": field.report.iterations, "residual": field.report.residual}
    utils.log_to_output(
        f"{data.kind} solve ({data.name}): epsilon={epsilon:.6g}, delta={delta:g}, "
        f"||Lambda grad u||={energies['lambda_grad']:.6g}, data norm={data_norm:.6g}"
    )
    return BvpSolution(
        field=field,
        domain=domain,
        epsilon=epsilon,
        delta=float(delta),
        data=data,
        material=material,
        system=system,
        energies=energies,
        data_norm=data_norm,
        energy_constant=constant,
        diagnostics=diagnostics,
    )


def _phase_setup(mesh: meshing.TriMesh, delta: float) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Triangle mask and active vertices: everything for delta > 0, the matrix phase for delta = 0."""
    if delta > 0:
        return None, None
    return mesh.omega_triangles, mesh.omega_vertices


def solve_dirichlet(
    domain: geometry.PerforatedDomain,
    mesh: meshing.TriMesh,
    material: geometry.MaterialTensor,
    epsilon: float,
    delta: float,
    data: BoundaryData,
    tol: float = fem.DEFAULT_TOL,
) -> BvpSolution:
    """div(A_delta(x/eps) grad u) = 0 in Omega with u = f on the boundary."""
    if data.kind != DIRICHLET:
        raise ValueError(f"{data.name!r} is not Dirichlet data")
    check_geometry(domain, mesh, epsilon)
    mask, active = _phase_setup(mesh, delta)
    loop = mesh.boundary_loop
    values = data(mesh.vertices[loop], vertex_normals(mesh))
    constraints = fem.Constraints(dirichlet_nodes=loop, dirichlet_values=values, active=active)
    coefficient = geometry.CoefficientField(material, delta, epsilon)
    system = fem.assemble(mesh, coefficient, constraints=constraints, mask=mask)
    field = fem.solve(system, tol)
    data_norm = boundary_h1_norm(fem.BoundaryFunction.from_nodal(mesh, values))
    return _finish(field, domain, material, epsilon, delta, data, system, data_norm, {})


def solve_neumann(
    domain: geometry.PerforatedDomain,
    mesh: meshing.TriMesh,
    material: geometry.MaterialTensor,
    epsilon: float,
    delta: float,
    data: BoundaryData,
    tol: float = fem.DEFAULT_TOL,
) -> BvpSolution:
    """Conormal derivative g on the boundary; the solution has mean zero on the perforated domain."""
    if data.kind != NEUMANN:
        raise ValueError(f"{data.name!r} is not Neumann data")
    check_geometry(domain, mesh, epsilon)
    load, raw = fem.boundary_load(mesh, data, project_mean=True)
    if abs(raw) > COMPATIBILITY_TOL:
        utils.warn(NonCompatibleData, f"boundary integral of g is {raw:.3e}; its mean was removed")
    mask, active = _phase_setup(mesh, delta)
    constraints = fem.Constraints(
        mean_zero=True, mean_weights=mesh.lumped_mass(mesh.omega_triangles), active=active
    )
    coefficient = geometry.CoefficientField(material, delta, epsilon)
    system = fem.assemble(mesh, coefficient, constraints=constraints, load=load, mask=mask)
    field = fem.solve(system, tol)
    sampled = sample_edgewise(mesh, data)
    projected = fem.BoundaryFunction(mesh, sampled.values - raw / mesh.loop_lengths.sum())
    return _finish(
        field, domain, material, epsilon, delta, data, system, projected.l2_norm(), {"raw_boundary_integral": raw}
    )


# **********************************************************
# Transmission conditions.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class TransmissionReport:
    """Hole-by-hole fluxes; `trace_mismatch` is u+ - u- on the hole loops, 0 for conforming P1."""

    delta: float
    outside_flux: np.ndarray
    inside_flux: np.ndarray
    ratios: np.ndarray
    trace_mismatch: float = 0.0

    @property
    def target(self) -> float:
        return self.delta**2

    def worst_relative_deviation(self) -> float:
        """max |ratio / delta^2 - 1| over holes with a non-trivial inside flux."""
        valid = np.isfinite(self.ratios)
        if self.delta == 0 or not valid.any():
            return math.nan
        return float(np.max(np.abs(self.ratios[valid] / self.target - 1.0)))


def transmission_check(solution: BvpSolution) -> TransmissionReport:
    """Weak conormal fluxes on every hole loop from the matrix side and from the hole side.

    For a discrete solution the outside flux is -delta^2 times the inside flux;
    for delta = 0 the outside flux vanishes. The row of K u vanishes at every
    hole-boundary vertex, so the ratio equals delta^2 up to solver tolerance
    on any mesh: this checks that assembly and solve agree, it does not
    measure a discretization error band.
    """
    mesh = solution.mesh
    unscaled = geometry.CoefficientField(solution.material, 1.0, solution.epsilon)
    omega = mesh.omega_triangles
    u = solution.field.values
    outer = fem.stiffness_matrix(mesh, unscaled, omega) @ u
    inner = fem.stiffness_matrix(mesh, unscaled, ~omega) @ u
    outside, inside, ratios = [], [], []
    for region in sorted(mesh.hole_boundary_groups):
        group = mesh.hole_boundary_groups[region]
        plus, minus = outer[group], inner[group]
        norm_minus = float(minus @ minus)
        outside.append(float(np.linalg.norm(plus)))
        inside.append(math.sqrt(norm_minus))
        ratios.append(-float(plus @ minus) / norm_minus if norm_minus > 1e-30 else math.nan)
    return TransmissionReport(
        delta=solution.delta,
        outside_flux=np.array(outside),
        inside_flux=np.array(inside),
        ratios=np.array(ratios),
    )


# **********************************************************
# Green's functions.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class GreensFunction:
    field: fem.FemField
    source: Tuple[float, float]
    load: np.ndarray
    delta: float
    epsilon: float


def _source_load(mesh: meshing.TriMesh, source: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Mass-weighted hat bump of radius 2h around the source, with unit total mass."""
    bump = np.clip(1.0 - np.linalg.norm(mesh.vertices - source, axis=1) / (2.0 * mesh.h), 0.0, None)
    load = fem.mass_matrix(mesh) @ bump
    load[~allowed] = 0.0
    total = load.sum()
    if total <= 0:
        raise SourceTooClose(f"no admissible vertex near the source {tuple(source)}")
    return load / total


def greens_function(
    domain: geometry.PerforatedDomain,
    mesh: meshing.TriMesh,
    material: geometry.MaterialTensor,
    epsilon: float,
    delta: float,
    source: Sequence[float],
    tol: float = fem.DEFAULT_TOL,
) -> GreensFunction:
    """Discrete Green column for a mollified point source, zero Dirichlet data."""
    check_geometry(domain, mesh, epsilon)
    point = np.asarray(source, dtype=float)
    gap = min(float(domain.distance_to_boundary(point[None, :])[0]), float(domain.hole_distance(point[None, :])[0]))
    if domain.in_holes(point[None, :])[0] or gap < mesh.h:
        raise SourceTooClose(f"source {tuple(point)} is {gap:.3g} from the boundary or a hole (h={mesh.h:.3g})")
    mask, active = _phase_setup(mesh, delta)
    loop = mesh.boundary_loop
    allowed = np.ones(mesh.num_vertices, dtype=bool) if active is None else active.copy()
    allowed[loop] = False
    load = _source_load(mesh, point, allowed)
    constraints = fem.Constraints(dirichlet_nodes=loop, dirichlet_values=np.zeros(len(loop)), active=active)
    coefficient = geometry.CoefficientField(material, delta, epsilon)
    field = fem.solve(fem.assemble(mesh, coefficient, constraints=constraints, load=load, mask=mask), tol)
    if delta == 0:
        field = fem.extend_into_holes(field, material, epsilon)
    lowest = float(field.values.min())
    if lowest < -1e-10 * float(np.abs(field.values).max()):
        utils.log_warning(f"Green function takes negative values (min {lowest:.3e}); the mesh is not Delaunay")
    return GreensFunction(field=field, source=tuple(point.tolist()), load=load, delta=float(delta), epsilon=epsilon)


def green_value(green: GreensFunction, other: GreensFunction) -> float:
    """G(other.source, green.source) as the pairing of other's mollified source with green's column."""
    return float(other.load @ green.field.values)


@attrs.define(frozen=True, eq=False)
class DecayProfile:
    distances: np.ndarray
    values: np.ndarray
    fit: Optional[object]


def green_decay_profile(
    green: GreensFunction,
    domain: geometry.PerforatedDomain,
    boundary_point: Sequence[float],
    samples: int = 10,
) -> DecayProfile:
    """G(x, y) for y on the inward ray from a boundary point, against d(y).

    Only points with |x - y| >= max(8 eps, 2 max(d(x), d(y))) outside the
    holes are kept; the exponent of G ~ d(y)^sigma is fitted on them.
    """
    import perfhom_analysis as analysis  # pylint: disable=import-outside-toplevel

    mesh = green.field.mesh
    x = np.asarray(green.source)
    start = np.asarray(boundary_point, dtype=float)
    direction = (x - start) / np.linalg.norm(x - start)
    d_x = float(domain.distance_to_boundary(x[None, :])[0])
    distances = np.geomspace(2.0 * mesh.h, float(np.linalg.norm(x - start)), samples)
    points = start + distances[:, None] * direction
    d_y = domain.distance_to_boundary(points)
    separation = np.linalg.norm(points - x, axis=1)
    keep = (separation >= np.maximum(8.0 * domain.epsilon, 2.0 * np.maximum(d_x, d_y))) & ~domain.in_holes(points)
    values = green.field.evaluate(points[keep])
    good = np.isfinite(values) & (values > 0)
    d_kept, v_kept = d_y[keep][good], values[good]
    fit = analysis.fit_rate(list(zip(d_kept, v_kept))) if len(d_kept) >= 3 else None
    if fit is None:
        utils.log_warning(f"only {len(d_kept)} ray points lie in the far-field regime; no decay fit")
    return DecayProfile(distances=d_kept, values=v_kept, fit=fit)


# **********************************************************
# Continuity at delta = 0.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class ContinuityTable:
    deltas: Tuple[float, ...]
    differences: Tuple[float, ...]
    data_norm: float
    fit: Optional[object]


def delta_continuity(
    domain: geometry.PerforatedDomain,
    mesh: meshing.TriMesh,
    material: geometry.MaterialTensor,
    epsilon: float,
    data: BoundaryData,
    deltas: Sequence[float],
    jobs: int = 1,
    tol: float = fem.DEFAULT_TOL,
) -> ContinuityTable:
    """||grad(u_delta - u_0)|| on the perforated domain for a sweep of delta > 0."""
    import perfhom_analysis as analysis  # pylint: disable=import-outside-toplevel

    solver = solve_dirichlet if data.kind == DIRICHLET else solve_neumann
    solutions = utils.run_parallel(
        lambda d: solver(domain, mesh, material, epsilon, d, data, tol), [0.0, *deltas], jobs
    )
    reference = solutions[0].field
    differences = tuple(
        fem.region_norm(
            reference.with_values(s.field.values - reference.values), what="H1-semi", mask=mesh.omega_triangles
        )
        for s in solutions[1:]
    )
    fit = None
    if len(deltas) >= 3 and all(value > 0 for value in differences):
        fit = analysis.fit_rate(list(zip(deltas, differences)))
    return ContinuityTable(
        deltas=tuple(float(d) for d in deltas), differences=differences, data_norm=solutions[0].data_norm, fit=fit
    )
