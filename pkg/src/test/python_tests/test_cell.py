# Licensed under the MIT License.
"""
Tests for cell correctors, homogenized tensors and flux correctors.
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

import perfhom_cell as cell
import perfhom_geometry as geometry
import perfhom_mesh as meshing

from .perfhom_test_client import constants, utils

IDENTITY = geometry.MaterialTensor.identity()


@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0])
def test_trivial_homogenization(delta):
    """A = I without holes gives A_hat = I and vanishing correctors."""
    mesh = utils.plain_cell_mesh(0.125)
    chi = cell.correctors(mesh, IDENTITY, delta)
    tensor = cell.homogenized_tensor(chi, IDENTITY, delta)

    assert_that(float(np.max(np.abs(tensor.a_hat - np.eye(2)))), less_than(1e-10))
    assert_that(max(chi.energies), less_than(1e-18))


def test_energy_spread_skips_vanishing_correctors():
    """Energies at or below 1e-12 are left out of the max/min ratio."""
    assert_that(cell.energy_spread([1e-20, 2.0, 8.0]), close_to(4.0, 1e-12))
    assert_that(cell.energy_spread([1.0, 1000.0]), close_to(1000.0, 1e-9))
    assert_that(cell.energy_spread([0.0, 1e-15]), close_to(1.0, 0.0))


def test_laminate_oracle():
    """The {1, 4} laminate homogenizes to diag(harmonic mean, arithmetic mean)."""
    material = utils.laminate()
    tensor = cell.cell_tensor(utils.laminate_cell_mesh(0.125), material, 1.0)

    assert_that(float(tensor.a_hat[0, 0]), close_to(constants.LAMINATE_A11, 1e-6))
    assert_that(float(tensor.a_hat[1, 1]), close_to(constants.LAMINATE_A22, 1e-6))
    assert_that(float(abs(tensor.a_hat[0, 1])), less_than(1e-8))


def test_disk_cell_tensor_between_bounds():
    """A_hat is symmetric, energy-consistent and between the Reuss and Voigt bounds."""
    delta = 0.5
    mesh = utils.disk_cell_mesh(0.0625)
    tensor = cell.cell_tensor(mesh, IDENTITY, delta)
    theta = float(mesh.areas[~mesh.omega_triangles].sum())
    reuss = 1.0 / (theta / delta**2 + (1.0 - theta))
    voigt = theta * delta**2 + (1.0 - theta)

    assert_that(tensor.symmetry_error, less_than(1e-7))
    assert_that(tensor.consistency, less_than(1e-7))
    assert_that(tensor.lambda_min, greater_than_or_equal_to(reuss))
    assert_that(tensor.lambda_max, less_than_or_equal_to(voigt))
    assert_that(float(tensor.a_hat[0, 0]), close_to(float(tensor.a_hat[1, 1]), 0.01))


def test_zero_contrast_correctors_are_normalized_on_the_matrix():
    """At delta = 0 the correctors have zero mean on the matrix phase."""
    chi = cell.correctors(utils.disk_cell_mesh(0.0625), IDENTITY, 0.0)
    tensor = cell.homogenized_tensor(chi, IDENTITY, 0.0)

    assert_that(chi.normalization, equal_to(cell.MEAN_ZERO_ON_MATRIX))
    assert_that(max(abs(v) for v in chi.normalization_integrals()), less_than(1e-10))
    assert_that(tensor.lambda_min, greater_than(0.05))
    assert_that(tensor.lambda_max, less_than(1.0))


def test_correctors_need_a_periodic_mesh():
    """Non-periodic meshes are rejected."""
    mesh = meshing.mesh_unit_cell(utils.empty_cell(), 0.25, periodic=False)

    with pytest.raises(cell.MeshMismatch):
        cell.solve_corrector(mesh, IDENTITY, 1.0, 0)


def test_tensor_for_another_delta_is_rejected():
    """Correctors solved for one delta cannot build A_hat for another."""
    chi = cell.correctors(utils.plain_cell_mesh(0.25), IDENTITY, 1.0)

    with pytest.raises(cell.MeshMismatch):
        cell.homogenized_tensor(chi, IDENTITY, 0.5)


def test_flux_correctors_are_antisymmetric_and_mean_zero():
    """phi_kij = -phi_ikj exactly and every component has zero mean."""
    delta = 0.5
    mesh = utils.disk_cell_mesh(0.125)
    chi = cell.correctors(mesh, IDENTITY, delta)
    tensor = cell.homogenized_tensor(chi, IDENTITY, delta)
    flux = cell.flux_correctors(chi, tensor, IDENTITY, delta)

    assert_that(flux.antisymmetry_error(), equal_to(0.0))
    assert_that(float(np.max(np.abs(flux.mean_integrals()))), less_than(1e-10))
    assert_that(flux.mean_removed, less_than(cell.NONZERO_MEAN_TOL))
    assert_that(cell.divergence_free_residual(chi, tensor, IDENTITY, delta), less_than(1e-6))


def test_flux_residual_decreases_under_refinement():
    """The weak residual of b - div phi shrinks when h is halved."""
    delta = 0.5
    residuals = []
    for h in (0.125, 0.0625):
        chi = cell.correctors(utils.disk_cell_mesh(h), IDENTITY, delta)
        tensor = cell.homogenized_tensor(chi, IDENTITY, delta)
        residuals.append(cell.flux_divergence_residual(cell.flux_correctors(chi, tensor, IDENTITY, delta)))

    assert_that(residuals[1], less_than(residuals[0]))


def test_contrast_deviation_scales_like_delta_squared():
    """||A_hat_delta - A_hat_0|| decays with slope close to 2."""
    table = cell.contrast_deviation(utils.disk_cell_mesh(0.125), IDENTITY, [0.4, 0.2, 0.1])

    assert_that(len(table.deviations), equal_to(3))
    assert_that(table.fit.slope, close_to(2.0, 0.4))
    assert_that(table.reference.delta, equal_to(0.0))


def test_contrast_grid_excludes_zero():
    """The sweep grid must lie in (0, 1]."""
    with pytest.raises(ValueError):
        cell.contrast_deviation(utils.plain_cell_mesh(0.25), IDENTITY, [0.0, 0.5, 1.0])


def _tensor(low, high):
    a_hat = np.diag([low, high])
    return cell.HomogenizedTensor(a_hat, 1.0, low, high, a_hat, 0.0)


def test_ellipticity_window_flags_degradation():
    """A factor above three between the smallest eigenvalues is flagged."""
    window = cell.ellipticity_bounds([_tensor(0.5, 1.0), _tensor(2.0, 3.0)])

    assert_that(window.degradation, close_to(4.0, 1e-15))
    assert_that(window.flagged, is_(True))
    assert_that(window.lambda_min, close_to(0.5, 0.0))
    assert_that(window.lambda_max, close_to(3.0, 0.0))


def test_richardson_extrapolation():
    """Extrapolation over three levels stays close to the finest tensor."""
    result = cell.extrapolated_tensor(utils.disk_cell(), IDENTITY, 0.5, hs=(0.125, 0.0625, 0.03125))

    assert_that(result.order, greater_than_or_equal_to(0.5))
    assert_that(result.order, less_than_or_equal_to(4.0))
    assert_that(float(np.max(np.abs(result.a_hat - result.levels[-1].a_hat))), less_than(0.01))


def test_corrector_cache(tmp_path, monkeypatch):
    """Correctors are stored under PERFHOM_CACHE and read back unchanged."""
    monkeypatch.setenv("PERFHOM_CACHE", str(tmp_path))
    mesh = utils.disk_cell_mesh(0.125)

    first = cell.correctors(mesh, IDENTITY, 0.5)
    stored = list(tmp_path.glob("chi-*.npz"))
    second = cell.correctors(mesh, IDENTITY, 0.5)

    assert_that(len(stored), equal_to(1))
    assert_that(np.array_equal(first.chi[0].values, second.chi[0].values), is_(True))
    assert_that(math.isclose(first.energies[1], second.energies[1]), is_(True))
