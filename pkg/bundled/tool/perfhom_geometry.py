# Licensed under the MIT License.
"""Periodic coefficients, hole layouts and perforated macroscopic domains.

All values built here are immutable after construction and can be shared
between worker threads; every query is a pure function of its arguments.
"""
from __future__ import annotations

import itertools
import json
import math
import pathlib
from typing import Dict, List, Optional, Sequence, Tuple, Union

import attrs
import cattrs
import numpy as np
import shapely
from cattrs.gen import make_dict_structure_fn, make_dict_unstructure_fn, override

import perfhom_utils as utils

Matrix = Tuple[Tuple[float, float], Tuple[float, float]]

IDENTITY: Matrix = ((1.0, 0.0), (0.0, 1.0))
MATERIAL_KINDS = ("constant", "laminate", "regions", "sampled")
HOLE_KINDS = ("disk", "polygon")
CELL_DIAMETER = math.sqrt(2.0)


class GeometryError(utils.PerfhomError):
    """Base class for geometry errors."""

    pass  # pylint: disable=unnecessary-pass


class InvalidHole(GeometryError):
    """A hole record is not well formed."""

    pass  # pylint: disable=unnecessary-pass


class SeparationViolation(GeometryError):
    """Two holes, or a hole and the cell boundary, are too close."""

    def __init__(self, pair: Tuple[Union[int, str], Union[int, str]], gap: float, required: float):
        super().__init__(
            f"holes {pair[0]} and {pair[1]} are {gap:.6g} apart, need at least {required:.6g}"
        )
        self.pair = pair
        self.gap = gap
        self.required = required


class ClearanceViolation(GeometryError):
    """A scaled hole comes closer than kappa * epsilon to the macroscopic boundary."""

    pass  # pylint: disable=unnecessary-pass


class EllipticityViolation(GeometryError):
    """A coefficient sample breaks the ellipticity or symmetry bounds."""

    pass  # pylint: disable=unnecessary-pass


def _matrix(value: Sequence[Sequence[float]]) -> Matrix:
    rows = tuple(tuple(float(entry) for entry in row) for row in value)
    if len(rows) != 2 or any(len(row) != 2 for row in rows):
        raise EllipticityViolation(f"expected a 2x2 matrix, got {value!r}")
    return rows  # type: ignore[return-value]


def _nested_tuple(value):
    if isinstance(value, list):
        return tuple(_nested_tuple(item) for item in value)
    return float(value)


def _matrix_mu(matrix: np.ndarray) -> float:
    sym = 0.5 * (matrix + matrix.T)
    lam_min = float(np.linalg.eigvalsh(sym)[0])
    bound = float(np.max(np.abs(matrix)))
    return min(lam_min, 1.0 / bound) if bound > 0 else lam_min


# **********************************************************
# Material tensors.
# **********************************************************
@attrs.define(frozen=True, slots=False)
class MaterialTensor:
    """Periodic symmetric coefficient A(y) on the unit cell Y = [0, 1]^2.

    Kinds:
      constant   one matrix everywhere.
      laminate   scalar layers values[k] * I across `direction`, split at
                 `breakpoints` (interior points of (0, 1), increasing).
      regions    `matrix` on the matrix phase and `inclusion` inside holes.
      sampled    piecewise constant on a uniform grid of shape (m1, m2, 2, 2).

    Evaluation always reduces its argument mod 1.
    """

    kind: str = attrs.field(validator=attrs.validators.in_(MATERIAL_KINDS))
    mu: float
    matrix: Matrix = IDENTITY
    inclusion: Optional[Matrix] = None
    direction: int = 0
    values: Tuple[float, ...] = ()
    breakpoints: Tuple[float, ...] = ()
    grid: Optional[Tuple] = None
    holder: Optional[Tuple[float, float]] = None
    symmetric: bool = True

    @classmethod
    def identity(cls) -> "MaterialTensor":
        """A = I."""
        return cls(kind="constant", mu=1.0)

    @classmethod
    def constant(cls, matrix: Sequence[Sequence[float]], mu: Optional[float] = None) -> "MaterialTensor":
        """Constant coefficient; mu defaults to the largest admissible value."""
        value = _matrix(matrix)
        if mu is None:
            mu = _matrix_mu(np.array(value))
        return cls(kind="constant", mu=mu, matrix=value)

    @classmethod
    def laminate(
        cls,
        values: Sequence[float],
        breakpoints: Sequence[float],
        direction: int = 0,
        mu: Optional[float] = None,
    ) -> "MaterialTensor":
        """Layered scalar coefficient a(y_direction) * I."""
        values = tuple(float(v) for v in values)
        breakpoints = tuple(float(b) for b in breakpoints)
        if len(values) != len(breakpoints) + 1:
            raise EllipticityViolation("a laminate needs one more value than breakpoints")
        if any(not 0.0 < b < 1.0 for b in breakpoints) or list(breakpoints) != sorted(breakpoints):
            raise EllipticityViolation("laminate breakpoints must increase inside (0, 1)")
        if direction not in (0, 1):
            raise EllipticityViolation(f"laminate direction must be 0 or 1, got {direction}")
        if mu is None:
            mu = min(min(values), 1.0 / max(values))
        return cls(kind="laminate", mu=mu, direction=direction, values=values, breakpoints=breakpoints)

    @classmethod
    def regions(
        cls,
        matrix: Sequence[Sequence[float]],
        inclusion: Sequence[Sequence[float]],
        mu: Optional[float] = None,
    ) -> "MaterialTensor":
        """Two-phase coefficient: `matrix` on omega, `inclusion` in the holes."""
        outer, inner = _matrix(matrix), _matrix(inclusion)
        if mu is None:
            mu = min(_matrix_mu(np.array(outer)), _matrix_mu(np.array(inner)))
        return cls(kind="regions", mu=mu, matrix=outer, inclusion=inner)

    @classmethod
    def sampled(cls, grid: Sequence, mu: Optional[float] = None) -> "MaterialTensor":
        """Coefficient sampled on a uniform grid of cells."""
        array = np.asarray(grid, dtype=float)
        if array.ndim != 4 or array.shape[2:] != (2, 2):
            raise EllipticityViolation(f"sampled grid must have shape (m1, m2, 2, 2), got {array.shape}")
        if mu is None:
            mu = min(_matrix_mu(m) for m in array.reshape(-1, 2, 2))
        return cls(kind="sampled", mu=mu, grid=_nested_tuple(array.tolist()))

    @property
    def grid_array(self) -> np.ndarray:
        return np.asarray(self.grid, dtype=float)

    def evaluate(self, points: np.ndarray, inside: Optional[np.ndarray] = None) -> np.ndarray:
        """Returns A at cell points, shape (m, 2, 2); `inside` flags hole points."""
        y = np.mod(np.atleast_2d(np.asarray(points, dtype=float)), 1.0)
        count = y.shape[0]
        if self.kind == "constant":
            return np.broadcast_to(np.array(self.matrix), (count, 2, 2)).copy()
        if self.kind == "laminate":
            index = np.searchsorted(np.array(self.breakpoints), y[:, self.direction], side="right")
            scale = np.array(self.values)[index]
            return scale[:, None, None] * np.eye(2)[None, :, :]
        if self.kind == "regions":
            result = np.broadcast_to(np.array(self.matrix), (count, 2, 2)).copy()
            if inside is not None:
                result[np.asarray(inside, dtype=bool)] = np.array(self.inclusion)
            return result
        grid = self.grid_array
        m1, m2 = grid.shape[:2]
        i = np.minimum((y[:, 0] * m1).astype(int), m1 - 1)
        j = np.minimum((y[:, 1] * m2).astype(int), m2 - 1)
        return grid[i, j].copy()

    def interfaces(self) -> Dict[int, Tuple[float, ...]]:
        """Coordinate lines y_d = b across which A jumps, keyed by d."""
        if self.kind == "laminate":
            return {self.direction: self.breakpoints, 1 - self.direction: ()}
        if self.kind == "sampled":
            m1, m2 = self.grid_array.shape[:2]
            return {
                0: tuple(k / m1 for k in range(1, m1)),
                1: tuple(k / m2 for k in range(1, m2)),
            }
        return {0: (), 1: ()}

    def check(self, samples: int = 17) -> None:
        """Samples ellipticity, boundedness and symmetry on a grid of Y."""
        axis = (np.arange(samples) + 0.5) / samples
        points = np.array(list(itertools.product(axis, axis)))
        matrices = [self.evaluate(points)]
        if self.kind == "regions":
            matrices.append(self.evaluate(points, inside=np.ones(len(points), dtype=bool)))
        for values in matrices:
            asym = np.max(np.abs(values - values.transpose(0, 2, 1)))
            if asym > 1e-12:
                raise EllipticityViolation(f"coefficient is not symmetric (deviation {asym:.3g})")
            lam_min = float(np.min(np.linalg.eigvalsh(values)))
            if lam_min < self.mu * (1.0 - 1e-12):
                raise EllipticityViolation(f"smallest eigenvalue {lam_min:.6g} is below mu={self.mu:.6g}")
            bound = float(np.max(np.abs(values)))
            if bound > (1.0 / self.mu) * (1.0 + 1e-12):
                raise EllipticityViolation(f"entry {bound:.6g} exceeds 1/mu={1.0 / self.mu:.6g}")

    def digest(self) -> str:
        return utils.config_hash(attrs.asdict(self))


# **********************************************************
# Holes and unit cells.
# **********************************************************
@attrs.define(frozen=True, slots=False)
class Hole:
    """A disk or a convex polygon (counterclockwise vertices)."""

    kind: str = attrs.field(validator=attrs.validators.in_(HOLE_KINDS))
    center: Tuple[float, float]
    radius: float = 0.0
    vertices: Tuple[Tuple[float, float], ...] = ()

    @classmethod
    def disk(cls, center: Sequence[float], radius: float) -> "Hole":
        if radius <= 0:
            raise InvalidHole(f"disk radius must be positive, got {radius}")
        return cls(kind="disk", center=(float(center[0]), float(center[1])), radius=float(radius))

    @classmethod
    def polygon(cls, vertices: Sequence[Sequence[float]]) -> "Hole":
        points = np.asarray(vertices, dtype=float)
        if points.ndim != 2 or points.shape[0] < 3 or points.shape[1] != 2:
            raise InvalidHole("a polygonal hole needs at least three 2D vertices")
        shape = shapely.Polygon(points)
        if not shape.is_valid or shape.area <= 0:
            raise InvalidHole("polygonal hole is degenerate or self-intersecting")
        if not math.isclose(shape.area, shape.convex_hull.area, rel_tol=1e-12):
            raise InvalidHole("polygonal holes must be convex")
        if not shapely.is_ccw(shape.exterior):
            points = points[::-1]
        centroid = shape.centroid
        return cls(
            kind="polygon",
            center=(centroid.x, centroid.y),
            vertices=tuple((float(x), float(y)) for x, y in points),
        )

    @property
    def shape(self) -> shapely.Geometry:
        if self.kind == "disk":
            return shapely.Point(self.center).buffer(self.radius, quad_segs=64)
        return shapely.Polygon(self.vertices)

    @property
    def area(self) -> float:
        if self.kind == "disk":
            return math.pi * self.radius**2
        return float(shapely.Polygon(self.vertices).area)

    @property
    def diameter(self) -> float:
        if self.kind == "disk":
            return 2.0 * self.radius
        points = np.array(self.vertices)
        return float(np.max(np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)))

    @property
    def inradius(self) -> float:
        """Radius of a disk around the center that fits inside the hole."""
        if self.kind == "disk":
            return self.radius
        return float(shapely.Polygon(self.vertices).exterior.distance(shapely.Point(self.center)))

    def bounds(self) -> Tuple[float, float, float, float]:
        if self.kind == "disk":
            cx, cy = self.center
            return (cx - self.radius, cy - self.radius, cx + self.radius, cy + self.radius)
        points = np.array(self.vertices)
        return (*points.min(axis=0), *points.max(axis=0))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Open-set membership; boundary points belong to the perforated side."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "disk":
            return np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1]) < self.radius
        verts = np.array(self.vertices)
        inside = np.ones(len(pts), dtype=bool)
        for start, end in zip(verts, np.roll(verts, -1, axis=0)):
            edge = end - start
            cross = edge[0] * (pts[:, 1] - start[1]) - edge[1] * (pts[:, 0] - start[0])
            inside &= cross > 0
        return inside

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the closed hole (0 inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "disk":
            gap = np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1]) - self.radius
            return np.maximum(gap, 0.0)
        return shapely.distance(self.shape, shapely.points(pts))

    def gap(self, other: "Hole") -> float:
        """Signed gap for disk pairs (negative when they overlap), distance otherwise."""
        if self.kind == "disk" and other.kind == "disk":
            return math.dist(self.center, other.center) - self.radius - other.radius
        return float(self.shape.distance(other.shape))

    def boundary_clearance(self) -> float:
        """Distance to the boundary of the unit cell."""
        x0, y0, x1, y1 = self.bounds()
        return min(x0, y0, 1.0 - x1, 1.0 - y1)

    def boundary_points(self, h: float) -> np.ndarray:
        """Counterclockwise polygon with segment length at most h."""
        if self.kind == "disk":
            count = max(8, math.ceil(2.0 * math.pi * self.radius / h))
            theta = 2.0 * math.pi * np.arange(count) / count
            return np.column_stack(
                [self.center[0] + self.radius * np.cos(theta), self.center[1] + self.radius * np.sin(theta)]
            )
        verts = np.array(self.vertices)
        chunks = []
        for start, end in zip(verts, np.roll(verts, -1, axis=0)):
            pieces = max(1, math.ceil(np.linalg.norm(end - start) / h))
            t = np.arange(pieces)[:, None] / pieces
            chunks.append(start + t * (end - start))
        return np.vstack(chunks)

    def scaled(self, epsilon: float, shift: Sequence[float]) -> "Hole":
        """Image of the hole under y -> epsilon * (y + shift)."""
        sx, sy = float(shift[0]), float(shift[1])
        if self.kind == "disk":
            return Hole(
                kind="disk",
                center=(epsilon * (self.center[0] + sx), epsilon * (self.center[1] + sy)),
                radius=epsilon * self.radius,
            )
        return Hole(
            kind="polygon",
            center=(epsilon * (self.center[0] + sx), epsilon * (self.center[1] + sy)),
            vertices=tuple((epsilon * (x + sx), epsilon * (y + sy)) for x, y in self.vertices),
        )


@attrs.define(frozen=True, slots=False)
class CellGeometry:
    """Hole layout F = union of F_k inside the unit cell Y."""

    holes: Tuple[Hole, ...]
    kappa: float
    enlarged_margin: float = attrs.field()

    @enlarged_margin.default
    def _margin(self) -> float:
        return self.kappa / 100.0

    @property
    def clearance(self) -> float:
        """Smallest hole-to-cell-boundary distance (inf without holes)."""
        return min((hole.boundary_clearance() for hole in self.holes), default=math.inf)

    @property
    def min_gap(self) -> float:
        """Smallest pairwise gap between holes, periodic images included."""
        gaps = [gap for _, _, gap in _pairwise_gaps(self.holes)]
        return min(gaps, default=math.inf)

    @property
    def hole_area(self) -> float:
        return sum(hole.area for hole in self.holes)

    def hole_index(self, points: np.ndarray) -> np.ndarray:
        """Index of the hole containing each cell point (after reduction mod 1), or -1."""
        y = np.mod(np.atleast_2d(np.asarray(points, dtype=float)), 1.0)
        index = np.full(len(y), -1, dtype=int)
        for k, hole in enumerate(self.holes):
            index[hole.contains(y)] = k
        return index

    def inside(self, points: np.ndarray) -> np.ndarray:
        return self.hole_index(points) >= 0

    def digest(self) -> str:
        return utils.config_hash(attrs.asdict(self))


def _pairwise_gaps(holes: Sequence[Hole]):
    for k, first in enumerate(holes):
        for ell in range(k + 1, len(holes)):
            second = holes[ell]
            gap = min(
                first.gap(second.scaled(1.0, shift))
                for shift in itertools.product((-1.0, 0.0, 1.0), repeat=2)
            )
            yield k, ell, gap


def build_cell_geometry(holes: Sequence[Hole], kappa: float) -> CellGeometry:
    """Validates a hole layout against the separation conditions."""
    if not 0.0 < kappa < 1.0:
        raise InvalidHole(f"kappa must lie in (0, 1), got {kappa}")
    holes = tuple(holes)
    for k, hole in enumerate(holes):
        x0, y0, x1, y1 = hole.bounds()
        if min(x0, y0) < 0.0 or max(x1, y1) > 1.0:
            raise InvalidHole(f"hole {k} leaves the unit cell")
        if hole.diameter > CELL_DIAMETER:
            raise InvalidHole(f"hole {k} has diameter {hole.diameter:.6g} > sqrt(2)")
    cell = CellGeometry(holes=holes, kappa=float(kappa))
    for k, ell, gap in _pairwise_gaps(holes):
        if gap < kappa:
            raise SeparationViolation((k, ell), gap, kappa)
    for k, hole in enumerate(holes):
        clearance = hole.boundary_clearance()
        if clearance <= cell.enlarged_margin:
            raise SeparationViolation((k, "boundary"), clearance, cell.enlarged_margin)
    utils.log_to_output(
        f"Cell with {len(holes)} hole(s): kappa={kappa}, clearance={cell.clearance:.6g}, "
        f"min gap={cell.min_gap:.6g}"
    )
    return cell


def contrast_at(point: Sequence[float], epsilon: float, delta: float, cell: CellGeometry) -> float:
    """Lambda_delta(x / epsilon): delta inside a hole, 1 on the closure of omega."""
    y = np.asarray(point, dtype=float) / epsilon
    return float(delta) if bool(cell.inside(y)[0]) else 1.0


def coefficient_at(
    point: Sequence[float],
    epsilon: float,
    delta: float,
    material: MaterialTensor,
    cell: CellGeometry,
) -> np.ndarray:
    """[Lambda_delta(x / epsilon)]^2 A(x / epsilon) as a 2x2 array."""
    y = np.atleast_2d(np.asarray(point, dtype=float) / epsilon)
    inside = cell.inside(y)
    scale = delta**2 if bool(inside[0]) else 1.0
    return scale * material.evaluate(y, inside=inside)[0]


@attrs.define(frozen=True)
class CoefficientField:
    """Vectorized A^epsilon_delta, evaluated on mesh triangles.

    Hole membership comes from the triangle region labels, so triangles are
    classified exactly like the mesh resolves the holes. With `epsilon`
    None the points are already cell coordinates.
    """

    material: MaterialTensor
    delta: float = 1.0
    epsilon: Optional[float] = None

    def __call__(self, points: np.ndarray, regions: np.ndarray) -> np.ndarray:
        y = points if self.epsilon is None else points / self.epsilon
        inside = np.asarray(regions) >= 0
        scale = np.where(inside, self.delta**2, 1.0)
        return self.material.evaluate(y, inside=inside) * scale[:, None, None]

    def contrast(self, regions: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(regions) >= 0, self.delta, 1.0)

    def with_delta(self, delta: float) -> "CoefficientField":
        return attrs.evolve(self, delta=delta)


# **********************************************************
# Perforated macroscopic domains.
# **********************************************************
@attrs.define(frozen=True)
class Rectangle:
    """Axis-aligned macroscopic domain [x0, x0 + width] x [y0, y0 + height]."""

    origin: Tuple[float, float] = (0.0, 0.0)
    size: Tuple[float, float] = (1.0, 1.0)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return (self.origin[0], self.origin[1], self.origin[0] + self.size[0], self.origin[1] + self.size[1])

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]

    @property
    def diameter(self) -> float:
        return math.hypot(*self.size)

    @property
    def perimeter(self) -> float:
        return 2.0 * (self.size[0] + self.size[1])

    @property
    def shape(self) -> shapely.Geometry:
        return shapely.box(*self.bounds)

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x0, y0, x1, y1 = self.bounds
        return np.minimum.reduce([pts[:, 0] - x0, x1 - pts[:, 0], pts[:, 1] - y0, y1 - pts[:, 1]])


@attrs.define(frozen=True)
class PerforatedDomain:
    """Omega^epsilon = Omega minus the epsilon-scaled periodic holes."""

    omega: Rectangle
    n: int
    cell: CellGeometry
    hole_instances: Tuple[Hole, ...]
    tiles: Tuple[Tuple[int, int, int], ...]
    kappa: float
    clearance: float

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n

    @property
    def diameter(self) -> float:
        return self.omega.diameter

    @property
    def boundary_length(self) -> float:
        return self.omega.perimeter

    @property
    def perforated_area(self) -> float:
        return self.omega.area - sum(hole.area for hole in self.hole_instances)

    @property
    def cell_counts(self) -> Tuple[int, int]:
        return (round(self.omega.size[0] * self.n), round(self.omega.size[1] * self.n))

    @property
    def is_cell_aligned(self) -> bool:
        values = [*self.omega.origin, *self.omega.size]
        return all(abs(v * self.n - round(v * self.n)) < 1e-9 for v in values)

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        return self.omega.distance_to_boundary(points)

    def in_holes(self, points: np.ndarray) -> np.ndarray:
        """True for points of Omega inside a scaled hole."""
        return self.cell.inside(np.asarray(points, dtype=float) / self.epsilon)

    def hole_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest scaled hole (inf without holes)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        result = np.full(len(pts), np.inf)
        for hole in self.hole_instances:
            np.minimum(result, hole.distance(pts), out=result)
        return result


def build_perforated_domain(n: int, cell: CellGeometry, omega_spec: Optional[Rectangle] = None) -> PerforatedDomain:
    """Tiles Omega by epsilon-cells (epsilon = 1/n) carrying the scaled hole layout."""
    if int(n) != n or n < 2:
        raise GeometryError(f"n must be an integer >= 2, got {n}")
    n = int(n)
    omega = omega_spec or Rectangle()
    epsilon = 1.0 / n
    x0, y0, x1, y1 = omega.bounds
    instances: List[Hole] = []
    tiles: List[Tuple[int, int, int]] = []
    i_range = range(math.floor(x0 * n + 1e-9), math.ceil(x1 * n - 1e-9))
    j_range = range(math.floor(y0 * n + 1e-9), math.ceil(y1 * n - 1e-9))
    omega_shape = omega.shape
    clearance = math.inf
    for i in i_range:
        for j in j_range:
            for k, hole in enumerate(cell.holes):
                scaled = hole.scaled(epsilon, (i, j))
                hx0, hy0, hx1, hy1 = scaled.bounds()
                if hx1 <= x0 or hx0 >= x1 or hy1 <= y0 or hy0 >= y1:
                    continue
                inside = hx0 > x0 and hy0 > y0 and hx1 < x1 and hy1 < y1
                gap = min(hx0 - x0, hy0 - y0, x1 - hx1, y1 - hy1) if inside else -float(
                    scaled.shape.intersection(omega_shape.exterior).length
                )
                clearance = min(clearance, gap)
                instances.append(scaled)
                tiles.append((i, j, k))
    domain = PerforatedDomain(
        omega=omega,
        n=n,
        cell=cell,
        hole_instances=tuple(instances),
        tiles=tuple(tiles),
        kappa=cell.kappa,
        clearance=clearance,
    )
    if instances and clearance < cell.kappa * epsilon * (1.0 - 1e-12):
        raise ClearanceViolation(
            f"dist(boundary, holes) = {clearance:.6g} is below kappa*epsilon = {cell.kappa * epsilon:.6g}"
        )
    utils.log_to_output(
        f"Perforated domain: n={n}, {len(instances)} holes, clearance={clearance:.6g}, "
        f"area={domain.perforated_area:.8g}"
    )
    return domain


@attrs.define(frozen=True)
class BoundaryStrip:
    """Sigma_t = {x in Omega : dist(x, boundary) < t}."""

    domain: PerforatedDomain
    t: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.domain.distance_to_boundary(points) < self.t

    @property
    def area(self) -> float:
        shape = self.domain.omega.shape
        inner = shape.buffer(-self.t, join_style="mitre")
        return float(shape.area - (0.0 if inner.is_empty else inner.area))


def boundary_strip(domain: PerforatedDomain, t: float) -> BoundaryStrip:
    """Region predicate for the boundary strip of width t."""
    if t <= 0:
        raise GeometryError(f"strip width must be positive, got {t}")
    return BoundaryStrip(domain=domain, t=float(t))


# **********************************************************
# JSON geometry configuration.
# **********************************************************
@attrs.define
class HoleSpec:
    kind: str = "disk"
    center: Optional[List[float]] = None
    radius: Optional[float] = None
    vertices: Optional[List[List[float]]] = None


@attrs.define
class CellSpec:
    holes: List[HoleSpec] = attrs.Factory(list)
    kappa: float = 0.2


@attrs.define
class MaterialSpec:
    kind: str = "constant"
    matrix: List[List[float]] = attrs.Factory(lambda: [[1.0, 0.0], [0.0, 1.0]])
    inclusion: Optional[List[List[float]]] = None
    direction: int = 0
    values: List[float] = attrs.Factory(list)
    breakpoints: List[float] = attrs.Factory(list)
    grid: Optional[List] = None
    mu: Optional[float] = None


@attrs.define
class OmegaSpec:
    origin: List[float] = attrs.Factory(lambda: [0.0, 0.0])
    size: List[float] = attrs.Factory(lambda: [1.0, 1.0])


@attrs.define
class GeometrySpec:
    cell: CellSpec = attrs.Factory(CellSpec)
    n: int = 8
    material: MaterialSpec = attrs.Factory(MaterialSpec)
    omega: OmegaSpec = attrs.Factory(OmegaSpec)


CONVERTER = cattrs.Converter()
CONVERTER.register_structure_hook(
    HoleSpec, make_dict_structure_fn(HoleSpec, CONVERTER, kind=override(rename="type"))
)
CONVERTER.register_unstructure_hook(
    HoleSpec,
    make_dict_unstructure_fn(HoleSpec, CONVERTER, kind=override(rename="type"), _cattrs_omit_if_default=True),
)


def structure_geometry(data: Dict) -> GeometrySpec:
    try:
        return CONVERTER.structure(data, GeometrySpec)
    except (cattrs.BaseValidationError, TypeError, ValueError) as exc:
        raise GeometryError(f"invalid geometry config: {exc}") from exc


def read_geometry_config(path: Union[str, pathlib.Path]) -> GeometrySpec:
    """Reads a geometry spec from a JSON file."""
    data = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    return structure_geometry(data)


def hole_from_spec(spec: HoleSpec) -> Hole:
    if spec.kind == "disk":
        if spec.center is None or spec.radius is None:
            raise InvalidHole("disk holes need a center and a radius")
        return Hole.disk(spec.center, spec.radius)
    if spec.kind == "polygon":
        if not spec.vertices:
            raise InvalidHole("polygonal holes need vertices")
        return Hole.polygon(spec.vertices)
    raise InvalidHole(f"unknown hole type {spec.kind!r}")


def cell_from_spec(spec: GeometrySpec) -> CellGeometry:
    return build_cell_geometry([hole_from_spec(h) for h in spec.cell.holes], spec.cell.kappa)


def material_from_spec(spec: GeometrySpec) -> MaterialTensor:
    mat = spec.material
    if mat.kind == "constant":
        material = MaterialTensor.constant(mat.matrix, mu=mat.mu)
    elif mat.kind == "laminate":
        material = MaterialTensor.laminate(mat.values, mat.breakpoints, mat.direction, mu=mat.mu)
    elif mat.kind == "regions":
        material = MaterialTensor.regions(mat.matrix, mat.inclusion or mat.matrix, mu=mat.mu)
    elif mat.kind == "sampled":
        material = MaterialTensor.sampled(mat.grid or [], mu=mat.mu)
    else:
        raise EllipticityViolation(f"unknown material kind {mat.kind!r}")
    material.check()
    return material


def omega_from_spec(spec: GeometrySpec) -> Rectangle:
    return Rectangle(
        origin=(float(spec.omega.origin[0]), float(spec.omega.origin[1])),
        size=(float(spec.omega.size[0]), float(spec.omega.size[1])),
    )


def domain_from_spec(spec: GeometrySpec, n: Optional[int] = None) -> PerforatedDomain:
    return build_perforated_domain(n or spec.n, cell_from_spec(spec), omega_from_spec(spec))
