# Licensed under the MIT License.
"""
Tests for Dirichlet, Neumann and Green problems on the perforated unit square.
"""
import math

import numpy as np
import pytest
from hamcrest import assert_that, close_to, equal_to, greater_than, greater_than_or_equal_to, is_, less_than

import perfhom_bvp as bvp
import perfhom_geometry as geometry

from .perfhom_test_client import utils

IDENTITY = geometry.MaterialTensor.identity()
EPSILON = 0.25


def _dirichlet(delta, name="sinusoidal", tol=1e-12):
    return bvp.solve_dirichlet(
        utils.disk_domain(4), utils.disk_domain_mesh(4, 8), IDENTITY, EPSILON, delta, bvp.boundary_data(name), tol
    )


def test_boundary_data_presets():
    """Presets carry their kind; unknown names are rejected."""
    assert_that(bvp.boundary_data("affine").kind, equal_to(bvp.DIRICHLET))
    assert_that(bvp.boundary_data("cosine").kind, equal_to(bvp.NEUMANN))

    with pytest.raises(ValueError):
        bvp.boundary_data("parabolic")


def test_unit_contrast_reproduces_affine_data():
    """At delta = 1 the coefficient is the identity, so u = x1 exactly."""
    solution = _dirichlet(1.0, "affine")
    mesh = solution.mesh

    assert_that(float(np.max(np.abs(solution.field.values - mesh.vertices[:, 0]))), less_than(1e-8))
    assert_that(solution.energies["grad"], close_to(1.0, 1e-8))
    assert_that(solution.energies["lambda_grad"], close_to(1.0, 1e-8))
    assert_that(solution.kind, equal_to(bvp.DIRICHLET))
    assert_that(solution.energy_constant, greater_than(0.0))


def test_dirichlet_solver_rejects_neumann_data():
    with pytest.raises(ValueError):
        _dirichlet(0.5, "cosine")


def test_transmission_ratio_is_delta_squared():
    """Outside and inside conormal fluxes on every hole differ by the factor delta^2."""
    report = bvp.transmission_check(_dirichlet(0.5))

    assert_that(len(report.ratios), equal_to(16))
    assert_that(report.target, close_to(0.25, 0.0))
    assert_that(report.worst_relative_deviation(), less_than(1e-3))
    assert_that(report.trace_mismatch, equal_to(0.0))


def test_zero_contrast_has_no_outside_flux():
    """At delta = 0 the holes carry homogeneous Neumann conditions."""
    solution = _dirichlet(0.0)
    report = bvp.transmission_check(solution)

    assert_that(float(report.outside_flux.max()), less_than(1e-8))
    assert_that(math.isnan(report.worst_relative_deviation()), is_(True))
    assert_that(bool(np.all(np.isfinite(solution.field.values))), is_(True))


def test_neumann_solution_has_mean_zero():
    """g = n1 at delta = 1 gives x1 up to a constant with zero matrix-phase mean."""
    mesh = utils.disk_domain_mesh(4, 8)
    solution = bvp.solve_neumann(
        utils.disk_domain(4), mesh, IDENTITY, EPSILON, 1.0, bvp.boundary_data("normal"), 1e-12
    )
    shift = solution.field.values - mesh.vertices[:, 0]

    assert_that(float(np.ptp(shift)), less_than(1e-8))
    assert_that(float(mesh.lumped_mass(mesh.omega_triangles) @ solution.field.values), close_to(0.0, 1e-10))
    assert_that(solution.diagnostics["raw_boundary_integral"], close_to(0.0, 1e-12))


def test_incompatible_neumann_data_warns():
    """Data with a non-zero boundary integral is projected with a warning."""
    data = bvp.BoundaryData(kind=bvp.NEUMANN, function=lambda p, _n: np.ones(len(p)), name="one")

    with pytest.warns(bvp.NonCompatibleData):
        solution = bvp.solve_neumann(utils.disk_domain(4), utils.disk_domain_mesh(4, 8), IDENTITY, EPSILON, 0.5, data)

    assert_that(solution.diagnostics["raw_boundary_integral"], close_to(4.0, 1e-12))


def test_mesh_without_holes_is_a_geometry_mismatch():
    """A plain square mesh does not resolve the perforations."""
    with pytest.raises(bvp.GeometryMismatch):
        bvp.solve_dirichlet(
            utils.disk_domain(4), utils.unit_square_mesh(0.0625), IDENTITY, EPSILON, 0.5, bvp.boundary_data("affine")
        )


def test_wrong_epsilon_is_a_geometry_mismatch():
    with pytest.raises(bvp.GeometryMismatch):
        bvp.check_geometry(utils.disk_domain(4), utils.disk_domain_mesh(4, 8), 0.5)


def _green(source, delta=0.5):
    return bvp.greens_function(
        utils.disk_domain(4), utils.disk_domain_mesh(4, 8), IDENTITY, EPSILON, delta, source, 1e-12
    )


def test_greens_function_is_symmetric():
    """G(x, y) = G(y, x) for the mollified discrete sources."""
    first = _green((0.25, 0.25))
    second = _green((0.75, 0.5))

    forward = bvp.green_value(first, second)
    backward = bvp.green_value(second, first)
    assert_that(forward, greater_than(0.0))
    assert_that(abs(forward - backward) / forward, less_than(1e-6))
    assert_that(float(first.load.sum()), close_to(1.0, 1e-12))


def test_green_source_in_a_hole_is_rejected():
    with pytest.raises(bvp.SourceTooClose):
        _green((0.125, 0.125))


def test_green_source_near_the_boundary_is_rejected():
    with pytest.raises(bvp.SourceTooClose):
        _green((0.5, 0.01))


def test_continuity_in_delta():
    """||grad(u_delta - u_0)|| on the matrix phase shrinks like delta^2."""
    table = bvp.delta_continuity(
        utils.disk_domain(4),
        utils.disk_domain_mesh(4, 8),
        IDENTITY,
        EPSILON,
        bvp.boundary_data("sinusoidal"),
        [0.4, 0.2, 0.1],
    )

    assert_that(len(table.differences), equal_to(3))
    assert_that(table.differences[1], less_than(table.differences[0]))
    assert_that(table.differences[2], less_than(table.differences[1]))
    assert_that(table.fit.slope, greater_than_or_equal_to(1.5))
    assert_that(table.data_norm, greater_than(0.0))
