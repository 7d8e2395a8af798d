# Licensed under the MIT License.
"""Measurements on discrete solutions: smoothing, two-scale expansion, maximal functions, rates."""
from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Tuple, Union

import attrs
import numpy as np

import perfhom_bvp as bvp
import perfhom_cell as cell
import perfhom_fem as fem
import perfhom_geometry as geometry
import perfhom_mesh as meshing
import perfhom_utils as utils

VARIANTS = ("N", "N_tilde", "N_t")
QUANTITIES = ("value", "gradient")
DEFAULT_APERTURE = 4.0
_CHUNK = 20000


class MissingCorrector(utils.PerfhomError):
    """Correctors are missing or were solved for another contrast."""

    pass  # pylint: disable=unnecessary-pass


class DegenerateBoundaryNorm(utils.PerfhomError):
    """The tangential boundary norm vanishes, so the Rellich ratio is undefined."""

    pass  # pylint: disable=unnecessary-pass


class RateFitError(utils.PerfhomError):
    """A log-log fit cannot be formed."""

    pass  # pylint: disable=unnecessary-pass


class NonPositiveValue(RateFitError):
    """A scale or value is zero or negative."""

    pass  # pylint: disable=unnecessary-pass


class TooFewPoints(RateFitError):
    """Fewer points than the fit needs."""

    pass  # pylint: disable=unnecessary-pass


class EmptyCone(utils.PerfhomWarning):
    """No candidate vertex lies in an approach cone; the nearest one was used."""

    pass  # pylint: disable=unnecessary-pass


# **********************************************************
# Rate fitting.
# **********************************************************
@attrs.define(frozen=True)
class RateFit:
    abscissae: Tuple[float, ...]
    ordinates: Tuple[float, ...]
    slope: float
    intercept: float
    residual: float

    def predict(self, scale: float) -> float:
        return math.exp(self.intercept) * scale**self.slope


def fit_rate(pairs: Sequence[Tuple[float, float]], min_points: int = 3) -> RateFit:
    """Least-squares slope of log(value) against log(scale)."""
    pairs = list(pairs)
    if len(pairs) < min_points:
        raise TooFewPoints(f"rate fit needs at least {min_points} points, got {len(pairs)}")
    scales = np.array([p[0] for p in pairs], dtype=float)
    values = np.array([p[1] for p in pairs], dtype=float)
    if np.any(scales <= 0) or np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise NonPositiveValue(f"rate fit needs positive finite pairs, got {pairs}")
    x, y = np.log(scales), np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return RateFit(
        abscissae=tuple(scales.tolist()),
        ordinates=tuple(values.tolist()),
        slope=float(slope),
        intercept=float(intercept),
        residual=residual,
    )


# **********************************************************
# Smoothing and cutoff.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class MollifierKernel:
    """Quadrature table of a radial bump supported in B(0, 1/2) with unit mass."""

    resolution: int
    offsets: np.ndarray
    weights: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def support_radius(self) -> float:
        return float(np.linalg.norm(self.offsets, axis=1).max())


def mollifier_kernel(resolution: int = 7) -> MollifierKernel:
    """Midpoint grid of the bump exp(-1 / (1 - 4|y|^2)), symmetric under y -> -y."""
    ticks = (np.arange(resolution) + 0.5) / resolution - 0.5
    grid = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2)
    radius2 = np.sum(grid**2, axis=1)
    inside = radius2 < 0.25
    offsets = grid[inside]
    bump = np.exp(-1.0 / (1.0 - 4.0 * radius2[inside]))
    return MollifierKernel(resolution=resolution, offsets=offsets, weights=bump / bump.sum())


Smoothable = Union[fem.FemField, Callable[[np.ndarray], np.ndarray]]


def smooth(
    source: Smoothable,
    epsilon: float,
    points: np.ndarray,
    kernel: Optional[MollifierKernel] = None,
) -> np.ndarray:
    """S_eps(f)(x) = sum_k w_k f(x - eps y_k) at the given points.

    A FemField is extended by zero outside its mesh. Callables may return
    scalar or vector values per point.
    """
    kernel = kernel or mollifier_kernel()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    count = len(kernel.weights)
    chunks = []
    for start in range(0, len(pts), _CHUNK):
        block = pts[start : start + _CHUNK]
        shifted = (block[:, None, :] - epsilon * kernel.offsets[None, :, :]).reshape(-1, 2)
        if isinstance(source, fem.FemField):
            values = source.evaluate(shifted, outside="zero")
        else:
            values = np.asarray(source(shifted), dtype=float)
        values = values.reshape(len(block), count, -1)
        chunks.append(np.einsum("nmk,m->nk", values, kernel.weights))
    result = np.concatenate(chunks) if chunks else np.zeros((0, 1))
    scalar = isinstance(source, fem.FemField) or result.shape[1] == 1
    return result[:, 0] if scalar else result


@attrs.define(frozen=True)
class CutoffFunction:
    """eta = 0 within outer*eps of the boundary, 1 beyond inner*eps, linear in between."""

    domain: geometry.PerforatedDomain
    epsilon: float
    inner: float = 8.0
    outer: float = 6.0

    def __attrs_post_init__(self):
        if not self.inner > self.outer >= 0:
            raise ValueError(f"cutoff needs inner > outer >= 0, got {self.inner}, {self.outer}")

    @property
    def width(self) -> float:
        return (self.inner - self.outer) * self.epsilon

    @property
    def gradient_bound(self) -> float:
        return 1.0 / self.width

    def __call__(self, points: np.ndarray) -> np.ndarray:
        distance = self.domain.distance_to_boundary(points)
        return np.clip((distance - self.outer * self.epsilon) / self.width, 0.0, 1.0)

    def support_margin(self) -> float:
        """Distance below which eta and its eps-smoothing both vanish."""
        return self.outer * self.epsilon - 0.5 * self.epsilon


# **********************************************************
# Homogenized problem and two-scale expansion.
# **********************************************************
def homogenized_solution(
    domain: geometry.PerforatedDomain,
    a_hat: np.ndarray,
    data: bvp.BoundaryData,
    h: float,
    tol: float = fem.DEFAULT_TOL,
) -> fem.FemField:
    """Constant-coefficient solve with A_hat on the unperforated Omega."""
    mesh = meshing.structured_rectangle(domain.omega, h)
    coefficient = fem.constant_coefficient(a_hat)
    if data.kind == bvp.DIRICHLET:
        loop = mesh.boundary_loop
        values = data(mesh.vertices[loop], bvp.vertex_normals(mesh))
        constraints = fem.Constraints(dirichlet_nodes=loop, dirichlet_values=values)
        system = fem.assemble(mesh, coefficient, constraints=constraints)
    else:
        load, _ = fem.boundary_load(mesh, data, project_mean=True)
        system = fem.assemble(mesh, coefficient, constraints=fem.Constraints(mean_zero=True), load=load)
    return fem.solve(system, tol)


def _cell_points(mesh: meshing.TriMesh, epsilon: float) -> np.ndarray:
    if mesh.cell_coords is not None:
        return mesh.cell_coords
    return np.mod(mesh.vertices / epsilon, 1.0)


def two_scale_expansion(
    u: bvp.BvpSolution,
    v: fem.FemField,
    correctors: Optional[cell.CorrectorSet],
    epsilon: float,
    cutoff: Optional[CutoffFunction] = None,
    kernel: Optional[MollifierKernel] = None,
) -> fem.FemField:
    """w = u - v - eps chi(x/eps) S_eps(eta grad v) on the mesh of u."""
    if correctors is None or len(correctors.chi) != 2:
        raise MissingCorrector("two-scale expansion needs both correctors")
    if correctors.delta != u.delta:
        raise MissingCorrector(f"correctors are for delta={correctors.delta}, solution for delta={u.delta}")
    mesh = u.mesh
    if mesh.cell_coords is None and u.domain.hole_instances:
        raise cell.MeshMismatch("perforated solutions must live on a tiled cell mesh")
    if abs(epsilon - u.epsilon) > 1e-12:
        raise cell.MeshMismatch(f"epsilon={epsilon} but the solution has epsilon={u.epsilon}")
    cutoff = cutoff or CutoffFunction(u.domain, epsilon)
    kernel = kernel or mollifier_kernel()

    v_fine = v.evaluate(mesh.vertices, outside="nearest")
    grad_v = v.nodal_gradient()

    def _eta_grad_v(points: np.ndarray) -> np.ndarray:
        g = np.column_stack(
            [v.mesh.interpolate(grad_v[:, k], points, outside="nearest") for k in range(2)]
        )
        return cutoff(points)[:, None] * g

    smoothed = np.zeros((mesh.num_vertices, 2))
    need = u.domain.distance_to_boundary(mesh.vertices) > cutoff.support_margin()
    if need.any():
        smoothed[need] = smooth(_eta_grad_v, epsilon, mesh.vertices[need], kernel)

    y = _cell_points(mesh, epsilon)
    chi = np.column_stack(
        [correctors.mesh.interpolate(field.values, y, outside="nearest") for field in correctors.chi]
    )
    values = u.field.values - v_fine - epsilon * np.sum(chi * smoothed, axis=1)
    return fem.FemField(mesh, values)


@attrs.define(frozen=True)
class ExpansionReport:
    epsilon: float
    delta: float
    lambda_grad: float
    grad_perforated: float
    l2: float
    tangential: float
    grad_u: float

    @property
    def rate_factor(self) -> float:
        """eps^(1/4) ||grad_tan f||^(1/2)."""
        return self.epsilon**0.25 * math.sqrt(self.tangential)

    @property
    def bracket(self) -> float:
        """||grad_tan f||^(1/2) + ||grad u||^(1/2)."""
        return math.sqrt(self.tangential) + math.sqrt(self.grad_u)

    @property
    def bound(self) -> float:
        return self.rate_factor * self.bracket

    @property
    def ratio(self) -> float:
        return self.lambda_grad / self.bound if self.bound > 0 else math.nan


def expansion_error(
    w: fem.FemField, f: fem.BoundaryFunction, epsilon: float, delta: float, grad_u: float
) -> ExpansionReport:
    """Norms of w against the eps^(1/4) bound; `grad_u` is ||grad u||_L2(Omega)."""
    omega = w.mesh.omega_triangles
    return ExpansionReport(
        epsilon=float(epsilon),
        delta=float(delta),
        lambda_grad=fem.region_norm(w, weight="lambda", what="H1-semi", delta=delta),
        grad_perforated=fem.region_norm(w, what="H1-semi", mask=omega) if omega.any() else 0.0,
        l2=fem.region_norm(w, what="L2"),
        tangential=fem.tangential_gradient(f).l2_norm(),
        grad_u=float(grad_u),
    )


# **********************************************************
# Nontangential maximal functions.
# **********************************************************
@attrs.define(frozen=True, eq=False)
class NtmfResult:
    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    variant: str
    quantity: str
    c0: float
    empty_cones: int

    def l2_norm(self) -> float:
        return float(math.sqrt(np.sum(self.weights * self.values**2)))


def _disk_rule(resolution: int = 5) -> np.ndarray:
    ticks = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    grid = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2)
    return grid[np.sum(grid**2, axis=1) < 1.0]


def _ball_averages(
    u: fem.FemField, centers: np.ndarray, radii: np.ndarray, quantity: str
) -> np.ndarray:
    """Root mean square of u (or |grad u|) over B(center, radius) by a fixed disk rule."""
    mesh = u.mesh
    rule = _disk_rule()
    if quantity == "gradient":
        nodal = u.nodal_gradient()
        components = [nodal[:, 0], nodal[:, 1]]
    else:
        components = [u.values]
    out = np.zeros(len(centers))
    for start in range(0, len(centers), _CHUNK):
        stop = start + _CHUNK
        pts = (centers[start:stop, None, :] + radii[start:stop, None, None] * rule[None, :, :]).reshape(-1, 2)
        square = sum(mesh.interpolate(c, pts, outside="nearest") ** 2 for c in components)
        out[start:stop] = np.sqrt(square.reshape(-1, len(rule)).mean(axis=1))
    return out


def ntmf(
    u: fem.FemField,
    domain: geometry.PerforatedDomain,
    c0: float = DEFAULT_APERTURE,
    variant: str = "N",
    t: Optional[float] = None,
    quantity: str = "value",
) -> NtmfResult:
    """Maximal function sampled at boundary edge midpoints.

    N takes the sup over vertices y in the cone |y - x| < c0 d(y) of the L2
    average of u over B(y, d(y)/4); N_tilde takes the sup of |u(y)| over
    cone vertices in the perforated domain; N_t truncates the cone at
    d(y) < t.
    """
    if c0 <= 1:
        raise ValueError(f"aperture must exceed 1, got {c0}")
    if variant not in VARIANTS or quantity not in QUANTITIES:
        raise ValueError(f"unknown variant {variant!r} or quantity {quantity!r}")
    if variant == "N_t" and (t is None or t <= 0):
        raise ValueError("the truncated maximal function needs t > 0")
    mesh = u.mesh
    edges = mesh.loop_edges
    samples = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    weights = mesh.loop_lengths

    distance = domain.distance_to_boundary(mesh.vertices)
    candidates = distance > 1e-12
    if variant == "N_tilde":
        candidates &= mesh.omega_vertices
    if variant == "N_t":
        candidates &= distance < t
    centers = mesh.vertices[candidates]
    d_cand = distance[candidates]
    if variant == "N_tilde":
        if quantity == "gradient":
            magnitude = np.linalg.norm(u.nodal_gradient(mesh.omega_triangles), axis=1)
        else:
            magnitude = np.abs(u.values)
        cand_values = magnitude[candidates]
    else:
        cand_values = _ball_averages(u, centers, 0.25 * d_cand, quantity)

    order = np.argsort(-cand_values, kind="stable")
    centers, d_cand, cand_values = centers[order], d_cand[order], cand_values[order]
    values = np.zeros(len(samples))
    empty = 0
    for index, x in enumerate(samples):
        in_cone = np.linalg.norm(centers - x, axis=1) < c0 * d_cand
        hits = np.flatnonzero(in_cone)
        if len(hits):
            values[index] = cand_values[hits[0]]
        elif len(centers):
            empty += 1
            values[index] = cand_values[np.argmin(np.linalg.norm(centers - x, axis=1))]
    if empty:
        utils.warn(EmptyCone, f"{empty} boundary sample(s) had an empty cone (c0={c0}); nearest candidates used")
    return NtmfResult(
        points=samples, weights=weights, values=values, variant=variant, quantity=quantity, c0=c0, empty_cones=empty
    )


# **********************************************************
# Boundary layers, Rellich ratios and difference quotients.
# **********************************************************
def boundary_layer_norm(u: fem.FemField, t: float, domain: geometry.PerforatedDomain) -> float:
    """Integral of |grad u|^2 over the strip of width t, by centroid membership."""
    if not 0 < t < 0.5 * domain.diameter:
        raise ValueError(f"strip width must lie in (0, diam/2), got {t}")
    mesh = u.mesh
    strip = geometry.boundary_strip(domain, t)
    inside = strip.contains(mesh.centroids)
    return float(np.sum((np.sum(u.gradients**2, axis=1) * mesh.areas)[inside]))


@attrs.define(frozen=True)
class RellichReport:
    conormal: float
    tangential: float

    @property
    def ratio(self) -> float:
        return self.conormal / self.tangential


def rellich_report(solution: bvp.BvpSolution) -> RellichReport:
    flux = fem.conormal_flux(solution.field, solution.material, solution.epsilon, solution.delta)
    tangential = fem.tangential_gradient(fem.boundary_trace(solution.field)).l2_norm()
    if tangential < 1e-12:
        raise DegenerateBoundaryNorm(f"||grad_tan u|| = {tangential:.3e} on the boundary")
    return RellichReport(conormal=flux.l2_norm(), tangential=tangential)


def rellich_ratio(solution: bvp.BvpSolution) -> float:
    """||conormal derivative|| / ||tangential gradient|| on the boundary."""
    return rellich_report(solution).ratio


@attrs.define(frozen=True, eq=False)
class DifferenceQuotient:
    field: fem.FemField
    valid: np.ndarray
    skipped: int
    residual_ratio: float


def difference_quotient(
    u: fem.FemField,
    epsilon: float,
    direction: int,
    system: Optional[fem.LinearSystem] = None,
) -> DifferenceQuotient:
    """Q(u)(x) = (u(x + eps e) - u(x)) / eps at every vertex whose translate stays in the mesh.

    With the system u solves, eps ||K Q|| / ||K u - b|| over interior vertices
    with a complete stencil is reported.
    """
    mesh = u.mesh
    shift = np.zeros(2)
    shift[direction] = epsilon
    x0, y0, x1, y1 = mesh.bounds
    targets = mesh.vertices + shift
    valid = (
        (targets[:, 0] <= x1 + 1e-12) & (targets[:, 0] >= x0 - 1e-12)
        & (targets[:, 1] <= y1 + 1e-12) & (targets[:, 1] >= y0 - 1e-12)
    )
    translated = np.full(mesh.num_vertices, np.nan)
    distance, nearest = mesh.vertex_tree.query(targets[valid])
    exact = distance < 1e-9 * max(epsilon, mesh.h)
    ids = np.flatnonzero(valid)
    translated[ids[exact]] = u.values[nearest[exact]]
    if not exact.all():
        translated[ids[~exact]] = u.evaluate(targets[ids[~exact]])
    valid &= np.isfinite(translated)
    values = np.where(valid, (np.nan_to_num(translated) - u.values) / epsilon, 0.0)
    field = fem.FemField(mesh, values)

    ratio = math.nan
    if system is not None:
        clean = np.ones(mesh.num_vertices, dtype=bool)
        clean[mesh.boundary_loop] = False
        bad_triangles = ~np.all(valid[mesh.triangles], axis=1)
        clean[mesh.triangles[bad_triangles].ravel()] = False
        if system.constraints.active is not None:
            clean &= np.asarray(system.constraints.active, dtype=bool)
        residual_u = (system.matrix @ u.values - system.rhs)[clean]
        residual_q = (system.matrix @ values)[clean]
        base = float(np.linalg.norm(residual_u))
        if base > 0:
            ratio = epsilon * float(np.linalg.norm(residual_q)) / base
    skipped = int(mesh.num_vertices - valid.sum())
    utils.log_to_output(f"Difference quotient: {skipped} vertices skipped, residual ratio {ratio:.3g}")
    return DifferenceQuotient(field=field, valid=valid, skipped=skipped, residual_ratio=ratio)
