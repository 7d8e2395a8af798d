# Licensed under the MIT License.
"""Configuration-driven studies: sweeps, rate fits, threshold checks and reports."""
from __future__ import annotations

import csv
import importlib.metadata
import json
import math
import pathlib
import sys
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import attrs
import cattrs
import numpy as np
from packaging.version import InvalidVersion, Version

import perfhom_analysis as analysis
import perfhom_bvp as bvp
import perfhom_cell as cell
import perfhom_fem as fem
import perfhom_geometry as geometry
import perfhom_mesh as meshing
import perfhom_utils as utils

STUDIES = (
    "fem",
    "cell",
    "contrast",
    "ellipticity",
    "flux",
    "expansion",
    "layer",
    "ntmf",
    "regularity",
    "rellich",
    "green",
    "continuity",
    "transmission",
)
EPSILON_FITS = ("expansion", "layer")
DELTA_FITS = ("contrast", "continuity")
MESH_FITS = ("fem", "flux")
CSV_COLUMNS = ("study", "epsilon", "delta", "h", "metric", "value")
LIBRARIES = ("numpy", "scipy", "shapely", "triangle", "matplotlib", "attrs", "cattrs")

DEFAULT_THRESHOLDS: Dict[str, Dict[str, float]] = {
    "fem": {
        "l2_slope_min": 1.8,
        "l2_slope_max": 2.2,
        "h1_slope_min": 0.85,
        "h1_slope_max": 1.15,
        "flux_slope_min": 1.7,
    },
    "cell": {
        "trivial_error_max": 1e-10,
        "laminate_error_max": 0.01,
        "symmetry_error_max": 1e-8,
        "consistency_max": 1e-8,
        "energy_spread_max": 10.0,
        "trivial_corrector_max": 1e-10,
    },
    "contrast": {"slope_min": 1.7, "slope_max": 2.5},
    "ellipticity": {"degradation_max": 3.0, "smallest_eigenvalue_min": 0.05},
    "flux": {"antisymmetry_max": 0.0, "mean_max": 1e-10, "residual_slope_min": 0.7},
    "expansion": {"slope_min": 0.2, "slope_spread_max": 0.3, "floor_ratio_max": 1.0 / 3.0},
    "layer": {"dirichlet_slope_min": 0.8, "neumann_slope_min": 0.8},
    "ntmf": {"spread_max": 5.0, "n_over_tilde_max": 10.0},
    "regularity": {
        "dirichlet_spread_max": 5.0,
        "neumann_spread_max": 5.0,
        "energy_spread_max": 5.0,
        "caccioppoli_max": 100.0,
    },
    "rellich": {"smallest_ratio_min": 0.2, "largest_ratio_max": 5.0},
    "green": {"symmetry_max": 1e-6, "sigma_min": 0.2, "uniformity_max": 3.0},
    "continuity": {"slope_min": 1.7},
    "transmission": {"ratio_deviation_max": 0.5, "outside_relative_max": 1e-6},
}


class ConfigError(utils.PerfhomError):
    """A study configuration is invalid."""

    pass  # pylint: disable=unnecessary-pass


class StudyError(utils.PerfhomError):
    """A study aborted; wraps the module error with the study name."""

    def __init__(self, study: str, error: Exception):
        super().__init__(f"study {study!r} failed: {error}")
        self.study = study
        self.error = error


def disk_geometry() -> geometry.GeometrySpec:
    """Centered disk of radius 1/4 in the unit cell, identity coefficient."""
    return geometry.GeometrySpec(
        cell=geometry.CellSpec(holes=[geometry.HoleSpec(kind="disk", center=[0.5, 0.5], radius=0.25)], kappa=0.2)
    )


@attrs.define
class StudyConfig:
    study: str
    geometry: geometry.GeometrySpec = attrs.Factory(disk_geometry)
    epsilons: List[float] = attrs.Factory(lambda: [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    deltas: List[float] = attrs.Factory(lambda: [0.0, 0.05, 0.2, 1.0])
    h_ratio: float = 8.0
    cell_h: float = 1 / 64
    hs: List[float] = attrs.Factory(lambda: [1 / 16, 1 / 32, 1 / 64])
    homogenized_h: float = 1 / 256
    data: str = "sinusoidal"
    neumann: str = "cosine"
    thresholds: Dict[str, float] = attrs.Factory(dict)
    cutoff: List[float] = attrs.Factory(lambda: [1.0, 0.5])
    aperture: float = analysis.DEFAULT_APERTURE
    tol: float = fem.DEFAULT_TOL
    seed: int = 0
    source: List[float] = attrs.Factory(lambda: [0.25, 0.5])
    partner: List[float] = attrs.Factory(lambda: [0.75, 0.5])
    ray_from: List[float] = attrs.Factory(lambda: [1.0, 0.5])
    out: Optional[str] = None


CONVERTER = geometry.CONVERTER.copy()


def validate_config(config: StudyConfig) -> StudyConfig:
    """Checks a config and fills in the default thresholds of its study."""
    if config.study not in STUDIES:
        raise ConfigError(f"unknown study {config.study!r}; choose from {', '.join(STUDIES)}")
    eps = list(config.epsilons)
    if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError(f"epsilons must be non-empty and strictly decreasing, got {eps}")
    for value in eps:
        n = 1.0 / value
        if value <= 0 or abs(n - round(n)) > 1e-9 or round(n) < 2:
            raise ConfigError(f"1/epsilon must be an integer >= 2, got epsilon={value}")
    if not config.deltas or any(not 0.0 <= d <= 1.0 for d in config.deltas):
        raise ConfigError(f"deltas must lie in [0, 1], got {config.deltas}")
    if config.h_ratio < 4:
        raise ConfigError(f"h = epsilon/{config.h_ratio} does not satisfy h <= epsilon/4")
    if config.study in EPSILON_FITS and len(eps) < 3:
        raise ConfigError(f"study {config.study!r} fits a rate and needs at least 3 epsilons, got {len(eps)}")
    if config.study in DELTA_FITS and len([d for d in config.deltas if d > 0]) < 3:
        raise ConfigError(f"study {config.study!r} needs at least 3 positive deltas")
    if config.study in MESH_FITS and len(config.hs) < 3:
        raise ConfigError(f"study {config.study!r} needs at least 3 mesh sizes")
    if len(config.cutoff) != 2 or not config.cutoff[0] > config.cutoff[1] >= 0:
        raise ConfigError(f"cutoff must be [inner, outer] with inner > outer >= 0, got {config.cutoff}")
    if config.aperture <= 1:
        raise ConfigError(f"aperture must exceed 1, got {config.aperture}")
    if config.tol <= 0:
        raise ConfigError(f"tol must be positive, got {config.tol}")
    for name in (config.data, config.neumann):
        if name not in bvp.PRESETS:
            raise ConfigError(f"unknown boundary data {name!r}")
    if bvp.PRESETS[config.data][0] != bvp.DIRICHLET or bvp.PRESETS[config.neumann][0] != bvp.NEUMANN:
        raise ConfigError("`data` must name Dirichlet data and `neumann` Neumann data")
    thresholds = {**DEFAULT_THRESHOLDS[config.study], **config.thresholds}
    for key in thresholds:
        if not key.endswith(("_min", "_max")):
            raise ConfigError(f"threshold {key!r} must end in _min or _max")
    return attrs.evolve(config, thresholds=thresholds)


def structure_config(data: Dict) -> StudyConfig:
    try:
        config = CONVERTER.structure(data, StudyConfig)
    except (cattrs.BaseValidationError, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid study config: {exc}") from exc
    return validate_config(config)


def read_config(path: Union[str, pathlib.Path]) -> StudyConfig:
    return structure_config(json.loads(pathlib.Path(path).read_text(encoding="utf-8")))


def unstructure_config(config: StudyConfig) -> Dict:
    return CONVERTER.unstructure(config)


# **********************************************************
# Results.
# **********************************************************
@attrs.define(frozen=True)
class Row:
    study: str
    epsilon: Optional[float]
    delta: Optional[float]
    h: Optional[float]
    metric: str
    value: float


@attrs.define(frozen=True)
class Criterion:
    name: str
    measured: Optional[float]
    threshold: float
    comparison: str
    passed: bool


@attrs.define
class StudyResult:
    study: str
    rows: List[Row] = attrs.Factory(list)
    fits: Dict[str, analysis.RateFit] = attrs.Factory(dict)
    criteria: List[Criterion] = attrs.Factory(list)
    provenance: Dict[str, Any] = attrs.Factory(dict)

    @property
    def passed(self) -> bool:
        return all(criterion.passed for criterion in self.criteria)


def evaluate_thresholds(measured: Dict[str, float], thresholds: Dict[str, float]) -> List[Criterion]:
    """One criterion per threshold; `x_min` asks measured x >= value, `x_max` asks x <= value."""
    criteria = []
    for key in sorted(thresholds):
        metric, bound = key[:-4], key[-3:]
        value = measured.get(metric)
        finite = value is not None and math.isfinite(value)
        if bound == "min":
            passed = finite and value >= thresholds[key]
        else:
            passed = finite and value <= thresholds[key]
        criteria.append(
            Criterion(
                name=key,
                measured=float(value) if finite else None,
                threshold=float(thresholds[key]),
                comparison=">=" if bound == "min" else "<=",
                passed=bool(passed),
            )
        )
    return criteria


def _version(name: str) -> str:
    try:
        return str(Version(importlib.metadata.version(name)))
    except (importlib.metadata.PackageNotFoundError, InvalidVersion):
        return "unknown"


def provenance(config: StudyConfig, rows: Sequence[Row]) -> Dict[str, Any]:
    data = unstructure_config(config)
    data.pop("out", None)
    return {
        "config_hash": utils.config_hash(data),
        "mesh_sizes": sorted({row.h for row in rows if row.h is not None}),
        "tol": config.tol,
        "seed": config.seed,
        "python": ".".join(str(part) for part in sys.version_info[:3]),
        "libraries": {name: _version(name) for name in LIBRARIES},
    }


# **********************************************************
# Study context.
# **********************************************************
@attrs.define
class _Context:
    config: StudyConfig
    jobs: int
    cell: geometry.CellGeometry
    material: geometry.MaterialTensor
    rows: List[Row] = attrs.Factory(list)
    _cell_meshes: Dict[float, meshing.TriMesh] = attrs.Factory(dict)
    _domains: Dict[Tuple[float, float], Tuple[geometry.PerforatedDomain, meshing.TriMesh]] = attrs.Factory(dict)

    @property
    def tol(self) -> float:
        return self.config.tol

    def add(self, epsilon: Optional[float], delta: Optional[float], h: Optional[float], metric: str, value: float):
        self.rows.append(Row(self.config.study, epsilon, delta, h, metric, float(value)))

    def cell_mesh(self, h: float) -> meshing.TriMesh:
        if h not in self._cell_meshes:
            self._cell_meshes[h] = meshing.mesh_unit_cell(self.cell, h, periodic=True, material=self.material)
        return self._cell_meshes[h]

    def domain(self, epsilon: float, h_ratio: Optional[float] = None) -> Tuple[geometry.PerforatedDomain, meshing.TriMesh]:
        """Perforated domain and its tiled mesh, h = epsilon / h_ratio."""
        ratio = h_ratio or self.config.h_ratio
        key = (epsilon, ratio)
        if key not in self._domains:
            domain = geometry.domain_from_spec(self.config.geometry, round(1.0 / epsilon))
            mesh = meshing.tile_cell_mesh(self.cell_mesh(1.0 / ratio), domain)
            self._domains[key] = (domain, mesh)
        return self._domains[key]

    def grid(self) -> List[Tuple[float, float]]:
        """(epsilon, delta) sweep points with meshes built beforehand."""
        for epsilon in self.config.epsilons:
            self.domain(epsilon)
        return [(epsilon, delta) for delta in self.config.deltas for epsilon in self.config.epsilons]

    def positive_deltas(self) -> List[float]:
        return [d for d in self.config.deltas if d > 0]


def _fit_or_none(pairs: Iterable[Tuple[float, float]]) -> Optional[analysis.RateFit]:
    pairs = list(pairs)
    if len(pairs) < 3 or any(not (v > 0 and math.isfinite(v)) for _, v in pairs):
        utils.log_warning(f"no rate fit for {pairs}")
        return None
    return analysis.fit_rate(pairs)


def _slope(fit: Optional[analysis.RateFit]) -> float:
    return fit.slope if fit is not None else math.nan


def _spread(values: Sequence[float]) -> float:
    values = [v for v in values if math.isfinite(v)]
    if not values or min(values) <= 0:
        return math.nan
    return max(values) / min(values)


# **********************************************************
# Studies.
# **********************************************************
def _manufactured(points: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * points[:, 0]) * np.sin(np.pi * points[:, 1])


def _manufactured_gradient(points: np.ndarray) -> np.ndarray:
    x, y = np.pi * points[:, 0], np.pi * points[:, 1]
    return np.pi * np.column_stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)])


def _manufactured_source(points: np.ndarray) -> np.ndarray:
    return 2.0 * np.pi**2 * _manufactured(points)


def _study_fem(ctx: _Context):
    hs = sorted(ctx.config.hs, reverse=True)
    identity = geometry.MaterialTensor.identity()

    def point(h: float):
        mesh = meshing.structured_rectangle(geometry.Rectangle(), h)
        loop = mesh.boundary_loop
        constraints = fem.Constraints(dirichlet_nodes=loop, dirichlet_values=np.zeros(len(loop)))
        system = fem.assemble(
            mesh, fem.constant_coefficient(np.eye(2)), source=_manufactured_source, constraints=constraints
        )
        field = fem.solve(system, ctx.tol)
        l2, h1 = fem.error_norms(field, _manufactured, _manufactured_gradient)
        flux = fem.conormal_flux(field, identity, None, 1.0, source=_manufactured_source)
        edges = mesh.loop_edges
        normals = mesh.loop_normals
        exact = fem.BoundaryFunction(
            mesh,
            np.column_stack(
                [np.sum(_manufactured_gradient(mesh.vertices[edges[:, e]]) * normals, axis=1) for e in (0, 1)]
            ),
        )
        return mesh.h, l2, h1, (flux.density - exact).l2_norm()

    results = utils.run_parallel(point, hs, ctx.jobs)
    for h, l2, h1, flux in results:
        ctx.add(None, None, h, "l2_error", l2)
        ctx.add(None, None, h, "h1_error", h1)
        ctx.add(None, None, h, "flux_error", flux)
    fits = {
        name: _fit_or_none((r[0], r[k]) for r in results) for k, name in ((1, "l2"), (2, "h1"), (3, "flux"))
    }
    return fits, {f"{name}_slope": _slope(fit) for name, fit in fits.items()}


def _tensor_rows(ctx: _Context, prefix: str, tensor: cell.HomogenizedTensor, h: float):
    a = tensor.a_hat
    for metric, value in (("a11", a[0, 0]), ("a12", a[0, 1]), ("a21", a[1, 0]), ("a22", a[1, 1])):
        ctx.add(None, tensor.delta, h, f"{prefix}{metric}", value)
    ctx.add(None, tensor.delta, h, f"{prefix}lambda_min", tensor.lambda_min)
    ctx.add(None, tensor.delta, h, f"{prefix}lambda_max", tensor.lambda_max)


def _study_cell(ctx: _Context):
    h = ctx.config.cell_h
    empty = geometry.build_cell_geometry([], ctx.cell.kappa)
    identity = geometry.MaterialTensor.identity()
    trivial_mesh = meshing.mesh_unit_cell(empty, h, periodic=True)
    trivial_sets = utils.run_parallel(
        lambda d: cell.correctors(trivial_mesh, identity, d, 1, ctx.tol), (0.0, 0.5, 1.0), ctx.jobs
    )
    trivial = [cell.homogenized_tensor(s, identity, s.delta) for s in trivial_sets]
    for tensor in trivial:
        _tensor_rows(ctx, "trivial_", tensor, h)

    laminate = geometry.MaterialTensor.laminate([1.0, 4.0], [0.5], direction=0)
    laminate_mesh = meshing.mesh_unit_cell(empty, h, periodic=True, material=laminate)
    layered = cell.cell_tensor(laminate_mesh, laminate, 1.0, ctx.jobs, ctx.tol)
    _tensor_rows(ctx, "laminate_", layered, h)

    mesh = ctx.cell_mesh(h)
    sets = utils.run_parallel(
        lambda d: cell.correctors(mesh, ctx.material, d, 1, ctx.tol), ctx.config.deltas, ctx.jobs
    )
    tensors = [cell.homogenized_tensor(s, ctx.material, s.delta) for s in sets]
    for s, tensor in zip(sets, tensors):
        _tensor_rows(ctx, "", tensor, h)
        ctx.add(None, s.delta, h, "energy_1", s.energies[0])
        ctx.add(None, s.delta, h, "energy_2", s.energies[1])
        ctx.add(None, s.delta, h, "consistency", tensor.consistency)
    energies = [sum(s.energies) for s in sets]
    spread = cell.energy_spread(energies)
    ctx.add(None, None, h, "energy_spread", spread)
    measured = {
        "trivial_error": max(float(np.max(np.abs(t.a_hat - np.eye(2)))) for t in trivial),
        "trivial_corrector": max(float(np.max(np.abs(f.values))) for s in trivial_sets for f in s.chi),
        "laminate_error": max(abs(layered.a_hat[0, 0] - 1.6) / 1.6, abs(layered.a_hat[1, 1] - 2.5) / 2.5),
        "symmetry_error": max(t.symmetry_error for t in tensors),
        "consistency": max(t.consistency for t in tensors),
        "energy_spread": spread,
    }
    return {}, measured


def _study_contrast(ctx: _Context):
    h = ctx.config.cell_h
    table = cell.contrast_deviation(ctx.cell_mesh(h), ctx.material, ctx.positive_deltas(), ctx.jobs, ctx.tol)
    for delta, deviation in zip(table.deltas, table.deviations):
        ctx.add(None, delta, h, "deviation", deviation)
    _tensor_rows(ctx, "reference_", table.reference, h)
    fits = {"deviation": table.fit} if table.fit is not None else {}
    return fits, {"slope": _slope(table.fit)}


def _study_ellipticity(ctx: _Context):
    h = ctx.config.cell_h
    mesh = ctx.cell_mesh(h)
    tensors = utils.run_parallel(
        lambda d: cell.cell_tensor(mesh, ctx.material, d, 1, ctx.tol), ctx.config.deltas, ctx.jobs
    )
    for tensor in tensors:
        _tensor_rows(ctx, "", tensor, h)
    window = cell.ellipticity_bounds(tensors)
    return {}, {"degradation": window.degradation, "smallest_eigenvalue": window.lambda_min}


def _study_flux(ctx: _Context):
    hs = sorted(ctx.config.hs, reverse=True)
    for h in hs:
        ctx.cell_mesh(h)

    def point(args):
        delta, h = args
        mesh = ctx.cell_mesh(h)
        chi = cell.correctors(mesh, ctx.material, delta, 1, ctx.tol)
        tensor = cell.homogenized_tensor(chi, ctx.material, delta)
        flux = cell.flux_correctors(chi, tensor, ctx.material, delta, ctx.tol)
        return (
            flux.antisymmetry_error(),
            float(np.max(np.abs(flux.mean_integrals()))),
            cell.flux_divergence_residual(flux, ctx.tol),
            cell.divergence_free_residual(chi, tensor, ctx.material, delta, seed=ctx.config.seed),
        )

    points = [(delta, h) for delta in ctx.config.deltas for h in hs]
    results = utils.run_parallel(point, points, ctx.jobs)
    fits = {}
    for (delta, h), (antisymmetry, mean, residual, weak) in zip(points, results):
        ctx.add(None, delta, h, "antisymmetry", antisymmetry)
        ctx.add(None, delta, h, "mean", mean)
        ctx.add(None, delta, h, "residual", residual)
        ctx.add(None, delta, h, "divergence_free_residual", weak)
    for delta in ctx.config.deltas:
        pairs = [(h, r[2]) for (d, h), r in zip(points, results) if d == delta]
        fits[f"residual[delta={delta:g}]"] = _fit_or_none(pairs)
    measured = {
        "antisymmetry": max(r[0] for r in results),
        "mean": max(r[1] for r in results),
        "residual_slope": min(_slope(fit) for fit in fits.values()),
    }
    return {k: v for k, v in fits.items() if v is not None}, measured


def _expansion_point(ctx: _Context, epsilon: float, delta: float, h_ratio: float, v: fem.FemField, data):
    domain, mesh = ctx.domain(epsilon, h_ratio)
    chi = cell.correctors(ctx.cell_mesh(1.0 / h_ratio), ctx.material, delta, 1, ctx.tol)
    u = bvp.solve_dirichlet(domain, mesh, ctx.material, epsilon, delta, data, ctx.tol)
    inner, outer = ctx.config.cutoff
    cutoff = analysis.CutoffFunction(domain, epsilon, inner, outer)
    w = analysis.two_scale_expansion(u, v, chi, epsilon, cutoff)
    report = analysis.expansion_error(w, fem.boundary_trace(u.field), epsilon, delta, u.energies["grad"])
    plain = fem.region_norm(
        u.field.with_values(u.field.values - v.evaluate(mesh.vertices, outside="nearest")),
        weight="lambda",
        what="H1-semi",
        delta=delta,
    )
    return mesh.h, report, plain


def _study_expansion(ctx: _Context):
    data = bvp.boundary_data(ctx.config.data)
    ratio = ctx.config.h_ratio
    cell_mesh = ctx.cell_mesh(1.0 / ratio)
    homogenized = {}
    for delta in ctx.config.deltas:
        tensor = cell.homogenized_tensor(
            cell.correctors(cell_mesh, ctx.material, delta, ctx.jobs, ctx.tol), ctx.material, delta
        )
        domain, _ = ctx.domain(ctx.config.epsilons[0])
        homogenized[delta] = analysis.homogenized_solution(
            domain, tensor.a_hat, data, ctx.config.homogenized_h, ctx.tol
        )
    points = ctx.grid()
    results = utils.run_parallel(
        lambda p: _expansion_point(ctx, p[0], p[1], ratio, homogenized[p[1]], data), points, ctx.jobs
    )
    fits = {}
    for (epsilon, delta), (h, report, plain) in zip(points, results):
        ctx.add(epsilon, delta, h, "lambda_grad", report.lambda_grad)
        ctx.add(epsilon, delta, h, "grad_perforated", report.grad_perforated)
        ctx.add(epsilon, delta, h, "l2", report.l2)
        ctx.add(epsilon, delta, h, "bound", report.bound)
        ctx.add(epsilon, delta, h, "bound_ratio", report.ratio)
        ctx.add(epsilon, delta, h, "uncorrected", plain)
    for delta in ctx.config.deltas:
        pairs = [(e, r[1].lambda_grad) for (e, d), r in zip(points, results) if d == delta]
        fits[f"lambda_grad[delta={delta:g}]"] = _fit_or_none(pairs)
    slopes = [_slope(fit) for fit in fits.values()]

    coarse = ctx.config.epsilons[0]
    floors = []
    for delta in ctx.config.deltas:
        base = next(r[1].lambda_grad for (e, d), r in zip(points, results) if e == coarse and d == delta)
        h_fine, refined, _ = _expansion_point(ctx, coarse, delta, 2.0 * ratio, homogenized[delta], data)
        ctx.add(coarse, delta, h_fine, "lambda_grad_refined", refined.lambda_grad)
        floors.append(abs(base - refined.lambda_grad) / refined.lambda_grad if refined.lambda_grad > 0 else math.nan)
    measured = {
        "slope": min(slopes),
        "slope_spread": max(slopes) - min(slopes),
        "floor_ratio": max(floors),
    }
    return {k: v for k, v in fits.items() if v is not None}, measured


def _solve(ctx: _Context, epsilon: float, delta: float, data: bvp.BoundaryData) -> bvp.BvpSolution:
    domain, mesh = ctx.domain(epsilon)
    solver = bvp.solve_dirichlet if data.kind == bvp.DIRICHLET else bvp.solve_neumann
    return solver(domain, mesh, ctx.material, epsilon, delta, data, ctx.tol)


def _study_layer(ctx: _Context):
    points = ctx.grid()
    fits, measured = {}, {}
    for kind, name in (("dirichlet", ctx.config.data), ("neumann", ctx.config.neumann)):
        data = bvp.boundary_data(name)

        def point(p, data=data):
            epsilon, delta = p
            u = _solve(ctx, epsilon, delta, data)
            return u.mesh.h, analysis.boundary_layer_norm(u.field, ctx.cell.kappa * epsilon, u.domain)

        results = utils.run_parallel(point, points, ctx.jobs)
        for (epsilon, delta), (h, value) in zip(points, results):
            ctx.add(epsilon, delta, h, f"{kind}_layer", value)
        slopes = []
        for delta in ctx.config.deltas:
            fit = _fit_or_none((e, r[1]) for (e, d), r in zip(points, results) if d == delta)
            if fit is not None:
                fits[f"{kind}_layer[delta={delta:g}]"] = fit
            slopes.append(_slope(fit))
        measured[f"{kind}_slope"] = min(slopes)
    return fits, measured


def _study_ntmf(ctx: _Context):
    data = bvp.boundary_data(ctx.config.data)
    points = ctx.grid()

    def point(p):
        u = _solve(ctx, p[0], p[1], data)
        full = analysis.ntmf(u.field, u.domain, ctx.config.aperture, "N")
        tilde = analysis.ntmf(u.field, u.domain, ctx.config.aperture, "N_tilde")
        positive = tilde.values > 0
        pointwise = float(np.max(full.values[positive] / tilde.values[positive])) if positive.any() else math.nan
        return u.mesh.h, full.l2_norm() / fem.boundary_trace(u.field).l2_norm(), pointwise

    results = utils.run_parallel(point, points, ctx.jobs)
    for (epsilon, delta), (h, ratio, pointwise) in zip(points, results):
        ctx.add(epsilon, delta, h, "ntmf_ratio", ratio)
        ctx.add(epsilon, delta, h, "n_over_tilde", pointwise)
    return {}, {
        "spread": _spread([r[1] for r in results]),
        "n_over_tilde": max(r[2] for r in results),
    }


def _caccioppoli_ball(domain: geometry.PerforatedDomain) -> Tuple[Tuple[float, float], float]:
    """Center of Omega and a radius whose doubled ball stays inside Omega."""
    x0, y0, x1, y1 = domain.omega.bounds
    return (0.5 * (x0 + x1), 0.5 * (y0 + y1)), 0.2 * min(x1 - x0, y1 - y0)


def _study_regularity(ctx: _Context):
    points = ctx.grid()
    measured = {}
    caccioppoli = []
    for kind, name in (("dirichlet", ctx.config.data), ("neumann", ctx.config.neumann)):
        data = bvp.boundary_data(name)

        def point(p, data=data):
            u = _solve(ctx, p[0], p[1], data)
            result = analysis.ntmf(u.field, u.domain, ctx.config.aperture, "N", quantity="gradient")
            center, radius = _caccioppoli_ball(u.domain)
            constant = fem.caccioppoli_ratio(u.field, u.delta, center, radius)
            return u.mesh.h, result.l2_norm() / u.data_norm, u.energy_constant, constant

        results = utils.run_parallel(point, points, ctx.jobs)
        for (epsilon, delta), (h, ratio, energy, constant) in zip(points, results):
            ctx.add(epsilon, delta, h, f"{kind}_gradient_ratio", ratio)
            ctx.add(epsilon, delta, h, f"{kind}_energy_constant", energy)
            ctx.add(epsilon, delta, h, f"{kind}_caccioppoli", constant)
        measured[f"{kind}_spread"] = _spread([r[1] for r in results])
        if kind == "dirichlet":
            measured["energy_spread"] = _spread([r[2] for r in results])
        caccioppoli.extend(r[3] for r in results)
    measured["caccioppoli"] = max(caccioppoli)
    return {}, measured


def _study_rellich(ctx: _Context):
    points = ctx.grid()
    ratios = []
    for name in ("affine", "sinusoidal"):
        data = bvp.boundary_data(name)

        def point(p, data=data):
            u = _solve(ctx, p[0], p[1], data)
            return u.mesh.h, analysis.rellich_ratio(u)

        results = utils.run_parallel(point, points, ctx.jobs)
        for (epsilon, delta), (h, ratio) in zip(points, results):
            ctx.add(epsilon, delta, h, f"rellich_{name}", ratio)
            ratios.append(ratio)
    return {}, {"smallest_ratio": min(ratios), "largest_ratio": max(ratios)}


def _study_green(ctx: _Context):
    points = ctx.grid()
    source, partner = ctx.config.source, ctx.config.partner

    def point(p):
        epsilon, delta = p
        domain, mesh = ctx.domain(epsilon)
        g_x = bvp.greens_function(domain, mesh, ctx.material, epsilon, delta, source, ctx.tol)
        g_y = bvp.greens_function(domain, mesh, ctx.material, epsilon, delta, partner, ctx.tol)
        forward, backward = bvp.green_value(g_x, g_y), bvp.green_value(g_y, g_x)
        symmetry = abs(forward - backward) / max(abs(forward), abs(backward), 1e-300)
        profile = bvp.green_decay_profile(g_x, domain, ctx.config.ray_from)
        far = mesh.omega_vertices & (
            np.linalg.norm(mesh.vertices - np.asarray(source), axis=1) >= 8.0 * epsilon
        )
        supremum = float(g_x.field.values[far].max()) if far.any() else math.nan
        return mesh.h, symmetry, profile.fit, supremum

    results = utils.run_parallel(point, points, ctx.jobs)
    fits, uniformity = {}, []
    for (epsilon, delta), (h, symmetry, fit, supremum) in zip(points, results):
        ctx.add(epsilon, delta, h, "symmetry", symmetry)
        ctx.add(epsilon, delta, h, "sigma", _slope(fit))
        ctx.add(epsilon, delta, h, "far_supremum", supremum)
        if fit is not None:
            fits[f"decay[epsilon={epsilon:g},delta={delta:g}]"] = fit
    for epsilon in ctx.config.epsilons:
        uniformity.append(_spread([r[3] for (e, _), r in zip(points, results) if e == epsilon]))
    return fits, {
        "symmetry": max(r[1] for r in results),
        "sigma": min(_slope(r[2]) for r in results),
        "uniformity": max(uniformity),
    }


def _study_continuity(ctx: _Context):
    data = bvp.boundary_data(ctx.config.data)
    deltas = ctx.positive_deltas()
    fits, slopes = {}, []
    for epsilon in ctx.config.epsilons:
        domain, mesh = ctx.domain(epsilon)
        table = bvp.delta_continuity(domain, mesh, ctx.material, epsilon, data, deltas, ctx.jobs, ctx.tol)
        for delta, difference in zip(table.deltas, table.differences):
            ctx.add(epsilon, delta, mesh.h, "difference", difference)
        if table.fit is not None:
            fits[f"difference[epsilon={epsilon:g}]"] = table.fit
        slopes.append(_slope(table.fit))
    return fits, {"slope": min(slopes)}


def _study_transmission(ctx: _Context):
    data = bvp.boundary_data(ctx.config.data)
    points = ctx.grid()

    def point(p):
        u = _solve(ctx, p[0], p[1], data)
        report = bvp.transmission_check(u)
        scale = float(report.inside_flux.max()) if len(report.inside_flux) else 0.0
        outside = float(report.outside_flux.max()) / scale if scale > 0 else 0.0
        return u.mesh.h, report.worst_relative_deviation(), outside

    results = utils.run_parallel(point, points, ctx.jobs)
    deviations, outside = [], []
    for (epsilon, delta), (h, deviation, relative) in zip(points, results):
        if delta > 0:
            ctx.add(epsilon, delta, h, "ratio_deviation", deviation)
            deviations.append(deviation)
        else:
            ctx.add(epsilon, delta, h, "outside_relative", relative)
            outside.append(relative)
    return {}, {
        "ratio_deviation": max(deviations, default=0.0),
        "outside_relative": max(outside, default=0.0),
    }


_RUNNERS: Dict[str, Callable[[_Context], Tuple[Dict, Dict]]] = {
    "fem": _study_fem,
    "cell": _study_cell,
    "contrast": _study_contrast,
    "ellipticity": _study_ellipticity,
    "flux": _study_flux,
    "expansion": _study_expansion,
    "layer": _study_layer,
    "ntmf": _study_ntmf,
    "regularity": _study_regularity,
    "rellich": _study_rellich,
    "green": _study_green,
    "continuity": _study_continuity,
    "transmission": _study_transmission,
}


def run_study(config: StudyConfig, jobs: int = 1) -> StudyResult:
    """Runs one study; rows gathered before a failure are flushed to <out>/<study>.partial.csv."""
    config = validate_config(config)
    utils.log_settings(f"Study {config.study}", unstructure_config(config))
    ctx = _Context(
        config=config,
        jobs=jobs,
        cell=geometry.cell_from_spec(config.geometry),
        material=geometry.material_from_spec(config.geometry),
    )
    try:
        fits, measured = _RUNNERS[config.study](ctx)
    except utils.PerfhomError as exc:
        if config.out:
            write_csv(ctx.rows, pathlib.Path(config.out) / f"{config.study}.partial.csv")
        utils.log_error(f"Study {config.study} aborted after {len(ctx.rows)} rows: {exc}")
        raise StudyError(config.study, exc) from exc
    result = StudyResult(
        study=config.study,
        rows=ctx.rows,
        fits=fits,
        criteria=evaluate_thresholds(measured, config.thresholds),
        provenance=provenance(config, ctx.rows),
    )
    for criterion in result.criteria:
        utils.log_always(
            f"{config.study}: {criterion.name} measured={criterion.measured} "
            f"{criterion.comparison} {criterion.threshold}: {'PASS' if criterion.passed else 'FAIL'}"
        )
    if config.out:
        emit_report([result], config.out, stem=config.study)
    return result


# **********************************************************
# Reports.
# **********************************************************
def _cell(value: Optional[float]) -> str:
    return "" if value is None else utils.format_value(value)


def write_csv(rows: Sequence[Row], path: Union[str, pathlib.Path]) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            if not math.isfinite(row.value):
                continue
            writer.writerow(
                [row.study, _cell(row.epsilon), _cell(row.delta), _cell(row.h), row.metric, _cell(row.value)]
            )
    return path


def _result_records(results: Sequence[StudyResult]) -> List[Dict]:
    records = []
    for result in results:
        record = CONVERTER.unstructure(result)
        record["rows"] = [r for r, row in zip(record["rows"], result.rows) if math.isfinite(row.value)]
        record["passed"] = result.passed
        records.append(record)
    return records


def _markdown(results: Sequence[StudyResult]) -> str:
    lines = ["# perfhom acceptance summary", "", "| study | criterion | measured | threshold | verdict |", "|---|---|---|---|---|"]
    for result in results:
        for criterion in result.criteria:
            measured = "n/a" if criterion.measured is None else utils.format_value(criterion.measured)
            lines.append(
                f"| {result.study} | {criterion.name} | {measured} | {criterion.comparison} "
                f"{utils.format_value(criterion.threshold)} | {'PASS' if criterion.passed else 'FAIL'} |"
            )
    verdict = "PASS" if all(r.passed for r in results) else "FAIL"
    lines.extend(["", f"Overall: {verdict}", ""])
    return "\n".join(lines)


def emit_report(
    results: Sequence[StudyResult],
    directory: Union[str, pathlib.Path],
    formats: Sequence[str] = ("csv", "json", "markdown"),
    stem: str = "results",
) -> List[pathlib.Path]:
    """Writes <stem>.csv, <stem>.json and <stem>.md into `directory`."""
    if not results:
        raise ValueError("no results to report")
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        written.append(write_csv([row for result in results for row in result.rows], directory / f"{stem}.csv"))
    if "json" in formats:
        path = directory / f"{stem}.json"
        path.write_text(json.dumps(_result_records(results), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    if "markdown" in formats:
        path = directory / f"{stem}.md"
        path.write_text(_markdown(results), encoding="utf-8")
        written.append(path)
    utils.log_to_output(f"Report written: {', '.join(str(p) for p in written)}")
    return written


def load_results(path: Union[str, pathlib.Path]) -> List[StudyResult]:
    """Reads a JSON report back into StudyResult records."""
    records = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    for record in records:
        record.pop("passed", None)
    return CONVERTER.structure(records, List[StudyResult])


# **********************************************************
# Acceptance suite.
# **********************************************************
def acceptance_configs() -> List[StudyConfig]:
    """Default configuration of every acceptance study."""
    contrast_grid = [0.4, 0.2, 0.1, 0.05]
    return [
        StudyConfig(study="fem"),
        StudyConfig(study="cell", deltas=[0.0, 0.5, 1.0]),
        StudyConfig(study="contrast", deltas=contrast_grid),
        StudyConfig(study="ellipticity"),
        StudyConfig(study="flux", deltas=[0.2, 1.0]),
        StudyConfig(study="expansion", deltas=[0.0, 0.2, 1.0]),
        StudyConfig(study="layer", deltas=[0.0, 1.0]),
        StudyConfig(study="ntmf"),
        StudyConfig(study="regularity", epsilons=[1 / 8, 1 / 16, 1 / 32]),
        StudyConfig(study="rellich"),
        StudyConfig(study="green", epsilons=[1 / 16, 1 / 32], deltas=[0.1, 0.5, 1.0]),
        StudyConfig(study="continuity", epsilons=[1 / 8, 1 / 16], deltas=contrast_grid),
        StudyConfig(study="transmission", epsilons=[1 / 8, 1 / 16], deltas=[0.0, 0.3, 1.0]),
    ]


def read_suite(path: Union[str, pathlib.Path]) -> List[StudyConfig]:
    """A suite file is a JSON list of study configs."""
    data = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ConfigError("a suite file must contain a JSON list of study configs")
    return [structure_config(item) for item in data]


def run_suite(
    configs: Sequence[StudyConfig], out: Union[str, pathlib.Path], jobs: int = 1, seed: Optional[int] = None
) -> List[StudyResult]:
    """Runs studies in order and writes the combined report."""
    results = []
    for config in configs:
        if seed is not None:
            config = attrs.evolve(config, seed=seed)
        results.append(run_study(attrs.evolve(config, out=str(out)), jobs))
    emit_report(results, out, stem="acceptance")
    return results
