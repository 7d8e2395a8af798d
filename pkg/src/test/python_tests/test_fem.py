# Licensed under the MIT License.
"""
Tests for assembly, the CG solver, norms, hole extension and boundary fluxes.
"""
import math

import numpy as np
import pytest
from hamcrest import assert_that, close_to, greater_than, is_, less_than

import perfhom_analysis as analysis
import perfhom_bvp as bvp
import perfhom_fem as fem
import perfhom_geometry as geometry

from .perfhom_test_client import constants, utils

ANISOTROPIC = [[2.0, 0.5], [0.5, 1.0]]


def _patch(points):
    return 1.0 + 2.0 * points[:, 0] - 3.0 * points[:, 1]


def test_patch_test_on_structured_mesh():
    """Affine Dirichlet data is reproduced exactly for a constant coefficient."""
    mesh = utils.unit_square_mesh(0.125)
    system = fem.assemble(mesh, fem.constant_coefficient(ANISOTROPIC), constraints=utils.dirichlet_constraints(mesh, _patch))
    field = fem.solve(system, 1e-12)

    assert_that(float(np.max(np.abs(field.values - _patch(mesh.vertices)))), less_than(1e-9))
    assert_that(system.symmetry_error, less_than(1e-14))
    assert_that(field.report.iterations, greater_than(0))


def test_patch_test_on_tiled_mesh():
    """The patch test also holds on the unstructured perforated mesh with delta = 1."""
    mesh = utils.disk_domain_mesh(4, 8)
    coefficient = geometry.CoefficientField(geometry.MaterialTensor.identity(), 1.0, 0.25)
    system = fem.assemble(mesh, coefficient, constraints=utils.dirichlet_constraints(mesh, _patch))
    field = fem.solve(system, 1e-12)

    assert_that(float(np.max(np.abs(field.values - _patch(mesh.vertices)))), less_than(1e-8))


def _exact(points):
    return np.sin(np.pi * points[:, 0]) * np.sin(np.pi * points[:, 1])


def _exact_gradient(points):
    x, y = np.pi * points[:, 0], np.pi * points[:, 1]
    return np.pi * np.column_stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)])


def _source(points):
    return 2.0 * np.pi**2 * _exact(points)


def test_manufactured_convergence_rates():
    """L2 errors decay like h^2 and H1 errors like h."""
    rows = []
    for h in (0.125, 0.0625, 0.03125):
        mesh = utils.unit_square_mesh(h)
        loop = mesh.boundary_loop
        constraints = fem.Constraints(dirichlet_nodes=loop, dirichlet_values=np.zeros(len(loop)))
        system = fem.assemble(mesh, fem.constant_coefficient(np.eye(2)), _source, constraints)
        rows.append((h, *fem.error_norms(fem.solve(system), _exact, _exact_gradient)))

    l2 = analysis.fit_rate([(h, e) for h, e, _ in rows])
    h1 = analysis.fit_rate([(h, e) for h, _, e in rows])
    assert_that(l2.slope, close_to(2.0, 0.2))
    assert_that(h1.slope, close_to(1.0, 0.15))


def test_neumann_problem_with_mean_zero():
    """Neumann data n1 gives u = x - 1/2 once the mean is removed."""
    mesh = utils.unit_square_mesh(0.125)
    load, raw = fem.boundary_load(mesh, lambda _p, n: n[:, 0])
    system = fem.assemble(mesh, fem.constant_coefficient(np.eye(2)), constraints=fem.Constraints(mean_zero=True), load=load)
    field = fem.solve(system, 1e-12)

    assert_that(raw, close_to(0.0, 1e-14))
    assert_that(float(np.max(np.abs(field.values - (mesh.vertices[:, 0] - 0.5)))), less_than(1e-9))
    assert_that(float(mesh.lumped_mass() @ field.values), close_to(0.0, 1e-12))


def test_zero_coefficient_is_singular():
    """A vanishing diagonal is reported instead of iterating."""
    mesh = utils.unit_square_mesh(0.25)
    system = fem.assemble(
        mesh, fem.constant_coefficient(np.zeros((2, 2))), constraints=utils.dirichlet_constraints(mesh, _patch)
    )

    with pytest.raises(fem.SingularSystem):
        fem.solve(system)


def test_weighted_norms_of_affine_field():
    """||Lambda^2 grad x1|| at delta = 0 is the square root of the matrix-phase area."""
    mesh = utils.disk_domain_mesh(4, 8)
    field = fem.FemField(mesh, mesh.vertices[:, 0])
    omega_area = float(mesh.areas[mesh.omega_triangles].sum())

    value = fem.region_norm(field, weight="lambda2", what="H1-semi", delta=0.0)
    assert_that(value, close_to(math.sqrt(omega_area), 1e-12))
    assert_that(value, close_to(math.sqrt(constants.DISK_AREA_FRACTION), 0.01))
    half = fem.region_norm(field, weight="lambda", what="H1-semi", delta=0.5)
    assert_that(half, close_to(math.sqrt(omega_area + 0.25 * (1.0 - omega_area)), 1e-12))
    assert_that(fem.region_norm(field, what="L2"), close_to(math.sqrt(1.0 / 3.0), 1e-12))


def test_empty_region_is_reported():
    """A region that holds no centroid raises EmptyRegion."""
    mesh = utils.unit_square_mesh(0.25)
    strip = geometry.boundary_strip(utils.disk_domain(4), 1e-6)

    with pytest.raises(fem.EmptyRegion):
        fem.region_norm(fem.FemField(mesh, mesh.vertices[:, 0]), strip)


def test_hole_extension_reproduces_affine_trace():
    """The A-harmonic extension of an affine trace is the affine function."""
    mesh = utils.disk_domain_mesh(4, 8)
    values = mesh.vertices[:, 0].copy()
    values[mesh.hole_interior_vertices] = 0.0
    extended = fem.extend_into_holes(fem.FemField(mesh, values), geometry.MaterialTensor.identity(), 0.25)

    error = np.abs(extended.values - mesh.vertices[:, 0])
    assert_that(float(error.max()), less_than(1e-9))


def test_hole_extension_ratios_are_bounded():
    """Per-hole energy ratios of an affine field are finite and of order one."""
    mesh = utils.disk_domain_mesh(4, 8)
    field = fem.FemField(mesh, mesh.vertices[:, 0])
    ratios = fem.hole_extension_ratios(field, utils.disk_domain(4).hole_instances, 0.0625)

    assert_that(len(ratios), is_(16))
    assert_that(float(ratios.max()), less_than(3.0))
    assert_that(float(ratios.min()), greater_than(0.1))


def test_caccioppoli_ratio_is_finite():
    """The Caccioppoli quotient of a discrete harmonic field is finite."""
    mesh = utils.unit_square_mesh(0.0625)
    field = fem.FemField(mesh, mesh.vertices[:, 0])
    ratio = fem.caccioppoli_ratio(field, 1.0, (0.5, 0.5), 0.15)

    assert_that(ratio, greater_than(0.0))
    assert_that(ratio, less_than(50.0))


def test_caccioppoli_ratio_of_a_perforated_solution():
    """At delta = 0 the quotient of a solution stays bounded; the holes carry no weight."""
    solution = bvp.solve_dirichlet(
        utils.disk_domain(4),
        utils.disk_domain_mesh(4, 8),
        geometry.MaterialTensor.identity(),
        0.25,
        0.0,
        bvp.boundary_data("sinusoidal"),
        1e-12,
    )
    ratio = fem.caccioppoli_ratio(solution.field, 0.0, (0.5, 0.5), 0.2)

    assert_that(ratio, greater_than(0.0))
    assert_that(ratio, less_than(100.0))


def test_boundary_trace_measures():
    """Trace integrals of x on the unit square."""
    mesh = utils.unit_square_mesh(0.125)
    trace = fem.boundary_trace(fem.FemField(mesh, mesh.vertices[:, 0]))

    assert_that(trace.integral(), close_to(2.0, 1e-12))
    assert_that(trace.l2_norm(), close_to(math.sqrt(5.0 / 3.0), 1e-12))
    assert_that(fem.tangential_gradient(trace).l2_norm(), close_to(math.sqrt(2.0), 1e-12))
    sampled = fem.sample_boundary(mesh, lambda p: p[:, 0])
    assert_that((trace - sampled).l2_norm(), close_to(0.0, 1e-14))


def test_boundary_load_projects_the_mean():
    """Projection removes the boundary mean from the data."""
    mesh = utils.unit_square_mesh(0.125)
    load, raw = fem.boundary_load(mesh, lambda p, _n: np.ones(len(p)), project_mean=True)

    assert_that(raw, close_to(4.0, 1e-12))
    assert_that(float(load.sum()), close_to(0.0, 1e-12))


def test_conormal_flux_of_affine_solution():
    """u = x has flux +1 on the right face, -1 on the left, 0 elsewhere."""
    mesh = utils.unit_square_mesh(0.125)
    system = fem.assemble(
        mesh, fem.constant_coefficient(np.eye(2)), constraints=utils.dirichlet_constraints(mesh, utils.affine)
    )
    field = fem.solve(system, 1e-12)
    flux = fem.conormal_flux(field, geometry.MaterialTensor.identity(), None, 1.0)

    edges = mesh.loop_edges
    exact = np.column_stack([mesh.loop_normals[:, 0], mesh.loop_normals[:, 0]])
    assert_that(float(np.max(np.abs(flux.density.values - exact))), less_than(1e-8))
    assert_that(flux.total, close_to(0.0, 1e-8))
    assert_that(len(edges), is_(32))


def test_flux_of_a_non_solution_warns():
    """Flux recovery of an arbitrary field issues NotASolution."""
    mesh = utils.unit_square_mesh(0.125)
    values = np.random.default_rng(0).normal(size=mesh.num_vertices)

    with pytest.warns(fem.NotASolution):
        fem.conormal_flux(fem.FemField(mesh, values), geometry.MaterialTensor.identity(), None, 1.0)


def test_field_shape_is_validated():
    """FemField rejects value arrays of the wrong length."""
    mesh = utils.unit_square_mesh(0.25)

    with pytest.raises(ValueError):
        fem.FemField(mesh, np.zeros(3))
