# Licensed under the MIT License.
"""
Tests for rate fits, smoothing, the two-scale expansion and boundary diagnostics.
"""
import math

import numpy as np
import pytest
from hamcrest import (
    assert_that,
    close_to,
    equal_to,
    greater_than,
    greater_than_or_equal_to,
    is_,
    less_than,
    less_than_or_equal_to,
)

import perfhom_analysis as analysis
import perfhom_bvp as bvp
import perfhom_cell as cell
import perfhom_fem as fem
import perfhom_geometry as geometry

from .perfhom_test_client import utils

IDENTITY = geometry.MaterialTensor.identity()


def test_fit_rate_recovers_power_law():
    """An exact power law is fitted with zero residual."""
    fit = analysis.fit_rate([(h, 3.0 * h**2) for h in (0.5, 0.25, 0.125, 0.0625)])

    assert_that(fit.slope, close_to(2.0, 1e-12))
    assert_that(math.exp(fit.intercept), close_to(3.0, 1e-10))
    assert_that(fit.residual, close_to(0.0, 1e-12))
    assert_that(fit.predict(0.1), close_to(0.03, 1e-12))


def test_fit_rate_tolerates_noise():
    """Five percent multiplicative noise on a linear law keeps the slope near one."""
    rng = np.random.default_rng(0)
    scales = [2.0**-k for k in range(1, 9)]
    fit = analysis.fit_rate([(h, 2.0 * h * (1.0 + 0.05 * rng.standard_normal())) for h in scales])

    assert_that(fit.slope, close_to(1.0, 0.1))
    assert_that(fit.residual, less_than(0.1))


def test_fit_rate_rejects_non_positive_values():
    with pytest.raises(analysis.NonPositiveValue):
        analysis.fit_rate([(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)])


def test_fit_rate_needs_three_points():
    with pytest.raises(analysis.TooFewPoints):
        analysis.fit_rate([(0.5, 1.0), (0.25, 0.5)])


def test_mollifier_kernel():
    """The kernel has unit mass and lives in the ball of radius 1/2."""
    kernel = analysis.mollifier_kernel()

    assert_that(kernel.mass, close_to(1.0, 1e-14))
    assert_that(kernel.support_radius, less_than(0.5))
    assert_that(float(np.max(np.abs(kernel.offsets.T @ kernel.weights))), close_to(0.0, 1e-15))


def test_smoothing_preserves_affine_functions():
    """A symmetric kernel with unit mass leaves affine functions unchanged."""
    points = np.array([[0.3, 0.4], [0.7, 0.2], [0.5, 0.5]])
    values = analysis.smooth(lambda p: 1.0 + 2.0 * p[:, 0] - p[:, 1], 0.1, points)

    exact = 1.0 + 2.0 * points[:, 0] - points[:, 1]
    assert_that(float(np.max(np.abs(values - exact))), less_than(1e-12))


def test_smoothing_vector_valued_functions():
    points = np.array([[0.3, 0.4], [0.6, 0.6]])
    values = analysis.smooth(lambda p: p, 0.05, points)

    assert_that(values.shape, equal_to((2, 2)))
    assert_that(float(np.max(np.abs(values - points))), less_than(1e-12))


def test_cutoff_function_profile():
    """eta ramps linearly from outer*eps to inner*eps."""
    eta = analysis.CutoffFunction(utils.disk_domain(4), 0.01)
    values = eta(np.array([[0.05, 0.5], [0.07, 0.5], [0.5, 0.5]]))

    assert_that(values.tolist()[0], close_to(0.0, 1e-12))
    assert_that(values.tolist()[1], close_to(0.5, 1e-12))
    assert_that(values.tolist()[2], close_to(1.0, 1e-12))
    assert_that(eta.gradient_bound, close_to(50.0, 1e-9))


def test_cutoff_needs_ordered_radii():
    with pytest.raises(ValueError):
        analysis.CutoffFunction(utils.disk_domain(4), 0.01, inner=2.0, outer=3.0)


def test_expansion_vanishes_at_unit_contrast():
    """With delta = 1 and A = I the correctors vanish and w is zero."""
    domain = utils.disk_domain(4)
    mesh = utils.disk_domain_mesh(4, 8)
    data = bvp.boundary_data("affine")
    u = bvp.solve_dirichlet(domain, mesh, IDENTITY, 0.25, 1.0, data, 1e-12)
    chi = cell.correctors(utils.disk_cell_mesh(0.125), IDENTITY, 1.0)
    v = analysis.homogenized_solution(domain, np.eye(2), data, 0.0625, 1e-12)

    w = analysis.two_scale_expansion(u, v, chi, 0.25)
    report = analysis.expansion_error(w, fem.boundary_trace(u.field), 0.25, 1.0, u.energies["grad"])
    assert_that(float(np.max(np.abs(w.values))), less_than(1e-8))
    assert_that(report.lambda_grad, less_than(1e-7))
    assert_that(report.tangential, close_to(math.sqrt(2.0), 1e-12))
    assert_that(report.bound, greater_than(0.0))


def test_expansion_needs_correctors():
    domain = utils.disk_domain(4)
    data = bvp.boundary_data("affine")
    u = bvp.solve_dirichlet(domain, utils.disk_domain_mesh(4, 8), IDENTITY, 0.25, 1.0, data)
    v = analysis.homogenized_solution(domain, np.eye(2), data, 0.125)

    with pytest.raises(analysis.MissingCorrector):
        analysis.two_scale_expansion(u, v, None, 0.25)


def test_ntmf_of_a_constant():
    """Every maximal function variant of u = 1 equals one on the boundary."""
    mesh = utils.unit_square_mesh(0.0625)
    field = fem.FemField(mesh, np.ones(mesh.num_vertices))
    domain = utils.disk_domain(4)

    for variant, t in (("N", None), ("N_tilde", None), ("N_t", 0.1)):
        result = analysis.ntmf(field, domain, variant=variant, t=t)
        assert_that(float(np.max(np.abs(result.values - 1.0))), less_than(1e-12))
        assert_that(result.l2_norm(), close_to(2.0, 1e-12))


def test_ntmf_narrow_aperture_warns():
    """Cones of aperture close to one miss the candidate vertices near the corners."""
    mesh = utils.unit_square_mesh(0.0625)
    field = fem.FemField(mesh, mesh.vertices[:, 0])

    with pytest.warns(analysis.EmptyCone):
        result = analysis.ntmf(field, utils.disk_domain(4), c0=1.01)
    assert_that(result.empty_cones, greater_than(0))


def test_ntmf_grows_with_the_aperture():
    """Wider cones contain the narrower ones, so the maximal function cannot drop."""
    mesh = utils.unit_square_mesh(0.0625)
    field = fem.FemField(mesh, np.sin(3.0 * mesh.vertices[:, 0]) + mesh.vertices[:, 1] ** 2)
    domain = utils.disk_domain(4)

    for variant in ("N", "N_tilde"):
        narrow = analysis.ntmf(field, domain, c0=2.0, variant=variant)
        wide = analysis.ntmf(field, domain, c0=4.0, variant=variant)
        assert_that(narrow.empty_cones, equal_to(0))
        assert_that(float(np.min(wide.values - narrow.values)), greater_than_or_equal_to(-1e-15))


def test_ntmf_averaged_is_controlled_by_pointwise():
    """Ball averages over the cone never exceed ten times the pointwise sup on the matrix phase."""
    u = bvp.solve_dirichlet(
        utils.disk_domain(4), utils.disk_domain_mesh(4, 8), IDENTITY, 0.25, 0.5, bvp.boundary_data("sinusoidal"), 1e-12
    )
    averaged = analysis.ntmf(u.field, u.domain, variant="N")
    pointwise = analysis.ntmf(u.field, u.domain, variant="N_tilde")
    nonzero = pointwise.values > 0

    assert_that(int(nonzero.sum()), greater_than(0))
    ratio = averaged.values[nonzero] / pointwise.values[nonzero]
    assert_that(float(ratio.max()), less_than_or_equal_to(10.0))


def test_ntmf_rejects_bad_arguments():
    mesh = utils.unit_square_mesh(0.25)
    field = fem.FemField(mesh, np.ones(mesh.num_vertices))

    with pytest.raises(ValueError):
        analysis.ntmf(field, utils.disk_domain(4), c0=1.0)
    with pytest.raises(ValueError):
        analysis.ntmf(field, utils.disk_domain(4), variant="N_t")


def test_boundary_layer_norm_of_affine_field():
    """|grad x1|^2 integrates to the strip area 1 - (3/4)^2."""
    mesh = utils.unit_square_mesh(0.0625)
    field = fem.FemField(mesh, mesh.vertices[:, 0])

    assert_that(analysis.boundary_layer_norm(field, 0.125, utils.disk_domain(4)), close_to(0.4375, 1e-12))


def test_rellich_ratio_of_affine_solution():
    """u = x1 has matching conormal and tangential boundary norms."""
    solution = bvp.solve_dirichlet(
        utils.disk_domain(4), utils.disk_domain_mesh(4, 8), IDENTITY, 0.25, 1.0, bvp.boundary_data("affine"), 1e-12
    )

    assert_that(analysis.rellich_ratio(solution), close_to(1.0, 1e-6))


def test_rellich_ratio_of_constant_is_degenerate():
    solution = bvp.solve_dirichlet(
        utils.disk_domain(4), utils.disk_domain_mesh(4, 8), IDENTITY, 0.25, 1.0, bvp.boundary_data("constant"), 1e-12
    )

    with pytest.raises(analysis.DegenerateBoundaryNorm):
        analysis.rellich_report(solution)


def test_difference_quotient_of_quadratic():
    """Q(x1^2) = 2 x1 + eps where the translate stays inside."""
    mesh = utils.unit_square_mesh(0.0625)
    field = fem.FemField(mesh, mesh.vertices[:, 0] ** 2)
    quotient = analysis.difference_quotient(field, 0.25, 0)

    x = mesh.vertices[:, 0]
    error = np.abs(quotient.field.values - (2.0 * x + 0.25))[quotient.valid]
    assert_that(float(error.max()), less_than(1e-12))
    assert_that(quotient.skipped, equal_to(68))
    assert_that(bool(quotient.valid[np.argmax(x)]), is_(False))
