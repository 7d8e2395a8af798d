# Licensed under the MIT License.
"""Periodic cell problems: correctors, homogenized tensors and flux correctors."""
from __future__ import annotations

import math
from typing import Dict, Optional, Sequence, Tuple

import attrs
import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

import perfhom_fem as fem
import perfhom_geometry as geometry
import perfhom_mesh as meshing
import perfhom_utils as utils

MEAN_ZERO_ON_Y = "mean-zero-on-Y"
MEAN_ZERO_ON_MATRIX = "mean-zero-on-Y-omega"

NONZERO_MEAN_TOL = 1e-8
DEGRADATION_LIMIT = 3.0
TRIVIAL_ENERGY = 1e-12


class DegenerateCell(utils.PerfhomError):
    """The matrix phase of the periodic cell is disconnected."""

    pass  # pylint: disable=unnecessary-pass


class MeshMismatch(utils.PerfhomError):
    """Inputs were computed on different meshes or for a different coefficient."""

    pass  # pylint: disable=unnecessary-pass


class NonZeroMean(utils.PerfhomError):
    """The flux discrepancy has a non-zero cell mean, so the tensor is inconsistent."""

    pass  # pylint: disable=unnecessary-pass


def _check_periodic(mesh: meshing.TriMesh) -> None:
    if mesh.periodic_master is None:
        raise MeshMismatch("cell problems need a periodic cell mesh")


def _matrix_connected(mesh: meshing.TriMesh) -> bool:
    master = mesh.periodic_master
    tris = master[mesh.triangles[mesh.omega_triangles]]
    if len(tris) == 0:
        return False
    rows = tris.ravel()
    cols = tris[:, [1, 2, 0]].ravel()
    size = mesh.num_vertices
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size))
    _, labels = csgraph.connected_components(graph, directed=False)
    return len(np.unique(labels[np.unique(tris)])) == 1


def solve_corrector(
    cell_mesh: meshing.TriMesh,
    material: geometry.MaterialTensor,
    delta: float,
    j: int,
    tol: float = fem.DEFAULT_TOL,
) -> fem.FemField:
    """Periodic solution of -div(A_delta grad chi_j) = div(A_delta e_j).

    For delta > 0 the problem lives on all of Y with mean zero on Y. For
    delta = 0 it is solved on the matrix phase with mean zero there and the
    result is extended into every hole by the same equation with Dirichlet
    data on the hole boundary.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    _check_periodic(cell_mesh)
    coefficient = geometry.CoefficientField(material, delta)
    flux = coefficient(cell_mesh.centroids, cell_mesh.triangle_regions)[:, :, j]
    if delta > 0:
        constraints = fem.Constraints(periodic=True, mean_zero=True)
        system = fem.assemble(cell_mesh, coefficient, constraints=constraints, flux=flux)
        return fem.solve(system, tol)

    matrix_phase = cell_mesh.omega_triangles
    if not _matrix_connected(cell_mesh):
        raise DegenerateCell("Y minus the holes is not connected through the periodic faces")
    constraints = fem.Constraints(
        periodic=True,
        mean_zero=True,
        active=cell_mesh.omega_vertices,
        mean_weights=cell_mesh.lumped_mass(matrix_phase),
    )
    system = fem.assemble(cell_mesh, coefficient, constraints=constraints, flux=flux, mask=matrix_phase)
    field = fem.solve(system, tol)
    return fem.extend_into_holes(field, material, None, source_direction=j, tol=tol)


def corrector_energy(field: fem.FemField) -> float:
    """Integral of |grad chi|^2 + |chi|^2 over the cell."""
    return fem.region_norm(field, what="H1") ** 2


def energy_spread(energies: Sequence[float], floor: float = TRIVIAL_ENERGY) -> float:
    """max/min of corrector energies over a delta grid.

    Energies at or below `floor` belong to correctors that vanish (delta = 1
    with a constant coefficient) and are left out; 1.0 when none remain.
    """
    nontrivial = [float(e) for e in energies if e > floor]
    if not nontrivial:
        return 1.0
    return max(nontrivial) / min(nontrivial)


@attrs.define(frozen=True, eq=False)
class CorrectorSet:
    mesh: meshing.TriMesh
    chi: Tuple[fem.FemField, fem.FemField]
    delta: float
    material: geometry.MaterialTensor
    normalization: str
    energies: Tuple[float, float]

    def gradients(self) -> np.ndarray:
        """G[t, i, j] = d_i chi_j on triangle t."""
        return np.stack([field.gradients for field in self.chi], axis=2)

    def normalization_integrals(self) -> Tuple[float, float]:
        mask = None if self.delta > 0 else self.mesh.omega_triangles
        weights = self.mesh.lumped_mass(mask)
        return tuple(float(weights @ field.values) for field in self.chi)


def _cache_key(cell_mesh: meshing.TriMesh, material: geometry.MaterialTensor, delta: float, tol: float) -> str:
    return utils.config_hash(
        {
            "mesh": utils.array_digest(cell_mesh.vertices, cell_mesh.triangles, cell_mesh.triangle_regions),
            "material": material.digest(),
            "delta": float(delta),
            "tol": float(tol),
        }
    )


def correctors(
    cell_mesh: meshing.TriMesh,
    material: geometry.MaterialTensor,
    delta: float,
    jobs: int = 1,
    tol: float = fem.DEFAULT_TOL,
) -> CorrectorSet:
    """Both correctors for one delta, read from PERFHOM_CACHE when available."""
    directory = utils.cache_dir()
    path = directory / f"chi-{_cache_key(cell_mesh, material, delta, tol)[:32]}.npz" if directory else None
    if path is not None and path.exists():
        with np.load(path) as stored:
            fields = (fem.FemField(cell_mesh, stored["chi0"]), fem.FemField(cell_mesh, stored["chi1"]))
        utils.log_to_output(f"Correctors for delta={delta} read from {path}")
    else:
        fields = tuple(
            utils.run_parallel(lambda j: solve_corrector(cell_mesh, material, delta, j, tol), (0, 1), jobs)
        )
        if path is not None:
            np.savez(path, chi0=fields[0].values, chi1=fields[1].values)
    return CorrectorSet(
        mesh=cell_mesh,
        chi=fields,
        delta=float(delta),
        material=material,
        normalization=MEAN_ZERO_ON_Y if delta > 0 else MEAN_ZERO_ON_MATRIX,
        energies=tuple(corrector_energy(field) for field in fields),
    )


# **********************************************************
# Homogenized tensor.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class HomogenizedTensor:
    a_hat: np.ndarray
    delta: float
    lambda_min: float
    lambda_max: float
    quadratic: np.ndarray
    consistency: float

    @property
    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.a_hat - self.a_hat.T)))

    @property
    def mu0(self) -> float:
        """Largest mu0 with mu0 |xi|^2 <= A xi . xi <= |xi|^2 / mu0."""
        return min(self.lambda_min, 1.0 / self.lambda_max)

    def as_dict(self) -> Dict:
        return {
            "delta": self.delta,
            "a_hat": self.a_hat.tolist(),
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "consistency": self.consistency,
        }


def _check_compatible(correctors_: CorrectorSet, material: geometry.MaterialTensor, delta: float) -> None:
    if abs(correctors_.delta - delta) > 0.0 or correctors_.material.digest() != material.digest():
        raise MeshMismatch(
            f"correctors were solved for delta={correctors_.delta}, not for delta={delta} with this material"
        )


def _cell_coefficient(mesh: meshing.TriMesh, material: geometry.MaterialTensor, delta: float) -> np.ndarray:
    return geometry.CoefficientField(material, delta)(mesh.centroids, mesh.triangle_regions)


def homogenized_tensor(
    correctors_: CorrectorSet, material: geometry.MaterialTensor, delta: float
) -> HomogenizedTensor:
    """Cell average of A_delta (I + grad chi), cross-checked by the energy form."""
    _check_compatible(correctors_, material, delta)
    mesh = correctors_.mesh
    areas = mesh.areas
    coefficient = _cell_coefficient(mesh, material, delta)
    corrected = np.eye(2)[None, :, :] + correctors_.gradients()
    volume = areas.sum()
    average = np.einsum("t,tik,tkj->ij", areas, coefficient, corrected) / volume
    quadratic = np.einsum("t,tki,tkl,tlj->ij", areas, corrected, coefficient, corrected) / volume
    consistency = float(np.max(np.abs(average - quadratic)) / max(np.max(np.abs(average)), 1e-300))
    eigenvalues = np.linalg.eigvalsh(0.5 * (average + average.T))
    tensor = HomogenizedTensor(
        a_hat=average,
        delta=float(delta),
        lambda_min=float(eigenvalues[0]),
        lambda_max=float(eigenvalues[-1]),
        quadratic=quadratic,
        consistency=consistency,
    )
    utils.log_to_output(
        f"A_hat(delta={delta}) = {average.tolist()}, eigenvalues [{eigenvalues[0]:.6g}, {eigenvalues[-1]:.6g}], "
        f"energy-form mismatch {consistency:.2e}"
    )
    return tensor


# **********************************************************
# Flux correctors.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class FluxCorrectorSet:
    """phi[(k, i, j)] with phi_kij = -phi_ikj, and the potentials f[(i, j)]."""

    phi: Dict[Tuple[int, int, int], fem.FemField]
    f_aux: Dict[Tuple[int, int], fem.FemField]
    b: np.ndarray
    mean_removed: float

    def antisymmetry_error(self) -> float:
        return max(
            float(np.max(np.abs(self.phi[(k, i, j)].values + self.phi[(i, k, j)].values)))
            for k in range(2)
            for i in range(2)
            for j in range(2)
        )

    def mean_integrals(self) -> np.ndarray:
        return np.array(
            [field.mesh.lumped_mass() @ field.values for field in self.phi.values()]
        )


def flux_discrepancy(
    correctors_: CorrectorSet, tensor: HomogenizedTensor, material: geometry.MaterialTensor, delta: float
) -> np.ndarray:
    """B = A_delta + A_delta grad chi - A_hat per triangle, shape (nt, 2, 2)."""
    _check_compatible(correctors_, material, delta)
    coefficient = _cell_coefficient(correctors_.mesh, material, delta)
    corrected = np.eye(2)[None, :, :] + correctors_.gradients()
    return np.einsum("tik,tkj->tij", coefficient, corrected) - tensor.a_hat[None, :, :]


def _periodic_lift(mesh: meshing.TriMesh, element_values: np.ndarray) -> np.ndarray:
    master = mesh.periodic_master
    index = master[mesh.triangles.ravel()]
    weights = np.repeat(mesh.areas, 3)
    num = np.bincount(index, weights=weights * np.repeat(element_values, 3), minlength=mesh.num_vertices)
    den = np.bincount(index, weights=weights, minlength=mesh.num_vertices)
    nodal = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return nodal[master]


def flux_correctors(
    correctors_: CorrectorSet,
    tensor: HomogenizedTensor,
    material: geometry.MaterialTensor,
    delta: float,
    tol: float = fem.DEFAULT_TOL,
) -> FluxCorrectorSet:
    """Antisymmetric potentials phi_kij = d_k f_ij - d_i f_kj with Laplace f_ij = b_ij."""
    mesh = correctors_.mesh
    b = flux_discrepancy(correctors_, tensor, material, delta)
    areas = mesh.areas
    mean = np.einsum("t,tij->ij", areas, b) / areas.sum()
    magnitude = float(np.max(np.abs(mean)))
    if magnitude > NONZERO_MEAN_TOL * max(1.0, float(np.max(np.abs(tensor.a_hat)))):
        raise NonZeroMean(f"cell mean of B is {magnitude:.3e}; A_hat does not match the correctors")
    b = b - mean[None, :, :]

    identity = fem.constant_coefficient(np.eye(2))
    constraints = fem.Constraints(periodic=True, mean_zero=True)
    potentials: Dict[Tuple[int, int], fem.FemField] = {}
    for i in range(2):
        for j in range(2):
            load = -np.bincount(
                mesh.triangles.ravel(), weights=np.repeat(areas * b[:, i, j] / 3.0, 3), minlength=mesh.num_vertices
            )
            system = fem.assemble(mesh, identity, constraints=constraints, load=load)
            potentials[(i, j)] = fem.solve(system, tol)

    weights = mesh.lumped_mass()
    zero = fem.FemField(mesh, np.zeros(mesh.num_vertices))
    phi: Dict[Tuple[int, int, int], fem.FemField] = {}
    for j in range(2):
        element = potentials[(1, j)].gradients[:, 0] - potentials[(0, j)].gradients[:, 1]
        nodal = _periodic_lift(mesh, element)
        nodal -= float(weights @ nodal) / float(weights.sum())
        phi[(0, 1, j)] = fem.FemField(mesh, nodal)
        phi[(1, 0, j)] = fem.FemField(mesh, -nodal)
        phi[(0, 0, j)] = zero
        phi[(1, 1, j)] = zero
    return FluxCorrectorSet(phi=phi, f_aux=potentials, b=b, mean_removed=magnitude)


def flux_divergence_residual(flux: FluxCorrectorSet, tol: float = fem.DEFAULT_TOL) -> float:
    """Dual (H1-periodic) norm of the weak residual of b_ij - d_k phi_kij, max over i, j."""
    any_field = next(iter(flux.phi.values()))
    mesh = any_field.mesh
    areas = mesh.areas
    identity = fem.constant_coefficient(np.eye(2))
    matrix = (fem.stiffness_matrix(mesh, identity) + fem.mass_matrix(mesh)).tocsr()
    index = mesh.triangles.ravel()
    worst = 0.0
    for i in range(2):
        for j in range(2):
            local = np.repeat(areas * flux.b[:, i, j] / 3.0, 3).reshape(-1, 3)
            for k in range(2):
                phi = flux.phi[(k, i, j)].values[mesh.triangles].mean(axis=1)
                local = local + (areas * phi)[:, None] * mesh.gradients[:, :, k]
            residual = np.bincount(index, weights=local.ravel(), minlength=mesh.num_vertices)
            system = fem.LinearSystem(mesh, matrix, residual, fem.Constraints(periodic=True))
            dual = fem.solve(system, tol)
            worst = max(worst, math.sqrt(max(float(residual @ dual.values), 0.0)))
    return worst


def divergence_free_residual(
    correctors_: CorrectorSet,
    tensor: HomogenizedTensor,
    material: geometry.MaterialTensor,
    delta: float,
    samples: int = 4,
    seed: int = 0,
) -> float:
    """max |int b_ij d_i psi| / ||grad psi|| over random periodic P1 fields psi."""
    mesh = correctors_.mesh
    b = flux_discrepancy(correctors_, tensor, material, delta)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        psi = fem.FemField(mesh, rng.standard_normal(mesh.num_vertices)[mesh.periodic_master])
        grad = psi.gradients
        scale = fem.region_norm(psi, what="H1-semi")
        pairing = np.einsum("t,tij,ti->j", mesh.areas, b, grad)
        worst = max(worst, float(np.max(np.abs(pairing))) / scale)
    return worst


# **********************************************************
# Sweeps over delta and mesh size.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class DeviationTable:
    deltas: Tuple[float, ...]
    deviations: Tuple[float, ...]
    reference: HomogenizedTensor
    tensors: Tuple[HomogenizedTensor, ...]
    fit: Optional[object] = None


def cell_tensor(
    cell_mesh: meshing.TriMesh,
    material: geometry.MaterialTensor,
    delta: float,
    jobs: int = 1,
    tol: float = fem.DEFAULT_TOL,
) -> HomogenizedTensor:
    return homogenized_tensor(correctors(cell_mesh, material, delta, jobs, tol), material, delta)


def contrast_deviation(
    cell_mesh: meshing.TriMesh,
    material: geometry.MaterialTensor,
    deltas: Sequence[float],
    jobs: int = 1,
    tol: float = fem.DEFAULT_TOL,
) -> DeviationTable:
    """Frobenius distance of A_hat_delta from A_hat_0, with a log-log slope fit."""
    import perfhom_analysis as analysis  # pylint: disable=import-outside-toplevel

    if any(not 0.0 < d <= 1.0 for d in deltas):
        raise ValueError("contrast grid must lie in (0, 1]")
    tensors = utils.run_parallel(
        lambda d: cell_tensor(cell_mesh, material, d, 1, tol), [0.0, *deltas], jobs
    )
    reference, rest = tensors[0], tuple(tensors[1:])
    deviations = tuple(float(np.linalg.norm(t.a_hat - reference.a_hat)) for t in rest)
    fit = None
    if len(deltas) >= 3 and all(value > 0 for value in deviations):
        fit = analysis.fit_rate(list(zip(deltas, deviations)))
    return DeviationTable(
        deltas=tuple(float(d) for d in deltas),
        deviations=deviations,
        reference=reference,
        tensors=rest,
        fit=fit,
    )


@attrs.define(frozen=True)
class EllipticityWindow:
    lambda_min: float
    lambda_max: float
    degradation: float
    flagged: bool


def ellipticity_bounds(tensors: Sequence[HomogenizedTensor]) -> EllipticityWindow:
    """Uniform ellipticity window over a delta sweep on one cell."""
    lows = [t.lambda_min for t in tensors]
    highs = [t.lambda_max for t in tensors]
    degradation = max(lows) / min(lows) if min(lows) > 0 else math.inf
    flagged = degradation > DEGRADATION_LIMIT
    if flagged:
        utils.log_warning(f"lambda_min varies by a factor {degradation:.3g} across the delta grid")
    return EllipticityWindow(
        lambda_min=float(min(lows)), lambda_max=float(max(highs)), degradation=float(degradation), flagged=flagged
    )


@attrs.define(frozen=True, eq=False)
class ExtrapolatedTensor:
    a_hat: np.ndarray
    order: float
    levels: Tuple[HomogenizedTensor, ...]
    hs: Tuple[float, ...]


def extrapolated_tensor(
    cell: geometry.CellGeometry,
    material: geometry.MaterialTensor,
    delta: float,
    hs: Sequence[float] = (1.0 / 16, 1.0 / 32, 1.0 / 64),
    jobs: int = 1,
    tol: float = fem.DEFAULT_TOL,
) -> ExtrapolatedTensor:
    """Richardson extrapolation of A_hat over three mesh levels with observed order."""
    if len(hs) != 3:
        raise ValueError("Richardson extrapolation needs exactly three mesh sizes")
    levels = tuple(
        utils.run_parallel(
            lambda h: cell_tensor(meshing.mesh_unit_cell(cell, h, True, material), material, delta, 1, tol),
            hs,
            jobs,
        )
    )
    ratio = hs[0] / hs[1]
    coarse = float(np.linalg.norm(levels[1].a_hat - levels[0].a_hat))
    fine = float(np.linalg.norm(levels[2].a_hat - levels[1].a_hat))
    if fine == 0.0 or coarse == 0.0:
        return ExtrapolatedTensor(levels[2].a_hat, math.nan, levels, tuple(hs))
    order = float(np.clip(math.log(coarse / fine) / math.log(ratio), 0.5, 4.0))
    a_hat = levels[2].a_hat + (levels[2].a_hat - levels[1].a_hat) / (ratio**order - 1.0)
    utils.log_to_output(f"Richardson: observed order {order:.3g}, A_hat = {a_hat.tolist()}")
    return ExtrapolatedTensor(a_hat, order, levels, tuple(hs))
