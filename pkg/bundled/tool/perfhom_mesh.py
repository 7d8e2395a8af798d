# Licensed under the MIT License.
"""Conforming triangulations of the unit cell and of perforated domains.

Cell meshes come from a structured grid when nothing needs resolving and
from a constrained Delaunay triangulation otherwise. Domain meshes tile one
periodic cell mesh, so every epsilon-cell carries an identical copy.

Plain-text mesh format, one record per line:

    h <mesh size>
    e <epsilon>               (domain meshes only)
    v <x> <y>
    t <i> <j> <k>
    m v <index> <marker>      0 interior, 1 outer boundary, 2 hole boundary
    m t <index> <region>      -1 matrix phase, k >= 0 hole index
    m p <index> <master>      periodic master vertex (cell meshes only)
    c <index> <y1> <y2>       cell coordinates (domain meshes only)
"""
from __future__ import annotations

import csv
import math
import pathlib
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import attrs
import matplotlib.tri as mtri
import numpy as np
import shapely
import triangle
from scipy.spatial import cKDTree

import perfhom_geometry as geometry
import perfhom_utils as utils

INTERIOR = 0
OUTER = 1
HOLE_BOUNDARY = 2
MATRIX_REGION = -1

_KEY_SCALE = 1e9


class MeshFailure(utils.PerfhomError):
    """The requested mesh could not be generated."""

    pass  # pylint: disable=unnecessary-pass


class MeshFormatError(utils.PerfhomError):
    """A mesh or field file could not be parsed."""

    pass  # pylint: disable=unnecessary-pass


@attrs.define(frozen=True, slots=False, eq=False)
class TriMesh:
    """P1 triangulation with boundary, region and periodicity labels."""

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_markers: np.ndarray
    triangle_regions: np.ndarray
    h: float
    periodic_master: Optional[np.ndarray] = None
    cell_coords: Optional[np.ndarray] = None
    epsilon: Optional[float] = None

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return (*self.vertices.min(axis=0), *self.vertices.max(axis=0))

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the three barycentric hats per triangle, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        twice = 2.0 * self.areas
        grads = np.empty((self.num_triangles, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            grads[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / twice
            grads[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / twice
        return grads

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def omega_triangles(self) -> np.ndarray:
        return self.triangle_regions == MATRIX_REGION

    def _touched(self, mask: np.ndarray) -> np.ndarray:
        touched = np.zeros(self.num_vertices, dtype=bool)
        touched[self.triangles[mask].ravel()] = True
        return touched

    @cached_property
    def omega_vertices(self) -> np.ndarray:
        """Vertices of the closure of the matrix phase."""
        return self._touched(self.omega_triangles)

    @cached_property
    def hole_vertices(self) -> np.ndarray:
        return self._touched(~self.omega_triangles)

    @cached_property
    def hole_interior_vertices(self) -> np.ndarray:
        return self.hole_vertices & ~self.omega_vertices

    @cached_property
    def hole_boundary_groups(self) -> Dict[int, np.ndarray]:
        """Vertices shared by the matrix phase and hole k, keyed by k."""
        groups = {}
        for region in np.unique(self.triangle_regions[~self.omega_triangles]):
            touched = self._touched(self.triangle_regions == region)
            groups[int(region)] = np.flatnonzero(touched & self.omega_vertices)
        return groups

    def lumped_mass(self, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Nodal weights w with sum_a w_a u_a equal to the integral of a P1 field."""
        areas = self.areas if mask is None else np.where(mask, self.areas, 0.0)
        return np.bincount(
            self.triangles.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=self.num_vertices
        )

    def lift(self, element_values: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Area-weighted average of per-triangle values at the vertices."""
        values = np.asarray(element_values, dtype=float)
        flat = values.reshape(self.num_triangles, -1)
        areas = self.areas if mask is None else np.where(mask, self.areas, 0.0)
        index = self.triangles.ravel()
        den = np.bincount(index, weights=np.repeat(areas, 3), minlength=self.num_vertices)
        out = np.zeros((self.num_vertices, flat.shape[1]))
        for col in range(flat.shape[1]):
            num = np.bincount(index, weights=np.repeat(areas * flat[:, col], 3), minlength=self.num_vertices)
            out[:, col] = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return out.reshape((self.num_vertices,) + values.shape[1:])

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Boundary edges oriented with the mesh on their left."""
        t = self.triangles
        edges = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        _, inverse, counts = np.unique(
            np.sort(edges, axis=1), axis=0, return_inverse=True, return_counts=True
        )
        return edges[counts[inverse.reshape(-1)] == 1]

    @cached_property
    def boundary_loop(self) -> np.ndarray:
        """Outer boundary vertices in counterclockwise order, starting at the lower-left corner."""
        edges = self.boundary_edges
        following = dict(zip(edges[:, 0].tolist(), edges[:, 1].tolist()))
        if len(following) != len(edges):
            raise MeshFailure("boundary is not a simple loop")
        starts = self.vertices[edges[:, 0]]
        start = int(edges[np.lexsort((starts[:, 0], starts.sum(axis=1)))[0], 0])
        loop = [start]
        current = following[start]
        while current != start:
            loop.append(current)
            current = following[current]
            if len(loop) > len(edges):
                raise MeshFailure("boundary loop does not close")
        if len(loop) != len(edges):
            raise MeshFailure("boundary has several components")
        return np.array(loop)

    @cached_property
    def loop_edges(self) -> np.ndarray:
        loop = self.boundary_loop
        return np.column_stack([loop, np.roll(loop, -1)])

    @cached_property
    def loop_lengths(self) -> np.ndarray:
        p = self.vertices[self.loop_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @cached_property
    def loop_normals(self) -> np.ndarray:
        """Outward unit normals of the loop edges."""
        p = self.vertices[self.loop_edges]
        d = (p[:, 1] - p[:, 0]) / self.loop_lengths[:, None]
        return np.column_stack([d[:, 1], -d[:, 0]])

    @cached_property
    def loop_corners(self) -> np.ndarray:
        """Loop positions where the boundary changes direction."""
        p = self.vertices[self.boundary_loop]
        d_out = np.roll(p, -1, axis=0) - p
        d_in = p - np.roll(p, 1, axis=0)
        cross = d_in[:, 0] * d_out[:, 1] - d_in[:, 1] * d_out[:, 0]
        scale = np.linalg.norm(d_in, axis=1) * np.linalg.norm(d_out, axis=1)
        return np.flatnonzero(np.abs(cross) > 1e-9 * scale)

    @cached_property
    def triangulation(self) -> mtri.Triangulation:
        return mtri.Triangulation(self.vertices[:, 0], self.vertices[:, 1], self.triangles)

    @cached_property
    def vertex_tree(self) -> cKDTree:
        return cKDTree(self.vertices)

    @cached_property
    def centroid_tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    def interpolate(self, values: np.ndarray, points: np.ndarray, outside: str = "nan") -> np.ndarray:
        """P1 interpolation at arbitrary points.

        `outside` selects the value for points the mesh does not cover:
        "nan", "zero" or "nearest" (nearest vertex value).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        interpolator = mtri.LinearTriInterpolator(
            self.triangulation, values, trifinder=self.triangulation.get_trifinder()
        )
        result = np.ma.filled(interpolator(pts[:, 0], pts[:, 1]).astype(float), np.nan)
        missing = np.isnan(result)
        if missing.any() and outside != "nan":
            if outside == "zero":
                result[missing] = 0.0
            else:
                _, nearest = self.vertex_tree.query(pts[missing])
                result[missing] = np.asarray(values)[nearest]
        return result


# **********************************************************
# Mesh construction helpers.
# **********************************************************
def _structured(origin: Sequence[float], size: Sequence[float], nx: int, ny: int):
    xs = origin[0] + size[0] * np.arange(nx + 1) / nx
    ys = origin[1] + size[1] * np.arange(ny + 1) / ny
    xx, yy = np.meshgrid(xs, ys)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10, v01 = v00 + 1, v00 + nx + 1
    v11 = v01 + 1
    triangles = np.vstack([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    return vertices, triangles


def _orient(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    signed = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(np.abs(signed) <= 1e-300):
        raise MeshFailure("triangulation contains degenerate triangles")
    flipped = triangles.copy()
    flipped[signed < 0] = flipped[signed < 0][:, [0, 2, 1]]
    return flipped


def _periodic_masters(vertices: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    reduced = np.where(vertices > 1.0 - tol, vertices - 1.0, vertices)
    reduced = np.where(np.abs(reduced) < tol, 0.0, reduced)
    keys = np.round(reduced * _KEY_SCALE).astype(np.int64)
    _, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    on_face = np.any((vertices > 1.0 - tol) | (vertices < tol), axis=1)
    if np.any(counts[inverse[on_face]] < 2):
        raise MeshFailure("periodic mesh has an unpaired boundary vertex")
    return first[inverse]


class _PointSet:
    """Deduplicating point list for the triangulation input."""

    def __init__(self):
        self.points: List[Tuple[float, float]] = []
        self._index: Dict[Tuple[int, int], int] = {}

    def add(self, x: float, y: float) -> int:
        key = (round(x * _KEY_SCALE), round(y * _KEY_SCALE))
        if key not in self._index:
            self._index[key] = len(self.points)
            self.points.append((x, y))
        return self._index[key]


def _resolution_limit(cell: geometry.CellGeometry) -> float:
    sizes = [hole.inradius for hole in cell.holes] + [cell.clearance, cell.min_gap]
    return min(sizes)


def _triangulate_cell(cell: geometry.CellGeometry, h: float, count: int, lines: Dict[int, Tuple[float, ...]]):
    grid = np.arange(count + 1) / count
    params = {d: np.unique(np.concatenate([grid, np.array(lines.get(d, ()), dtype=float)])) for d in (0, 1)}
    points = _PointSet()
    segments: List[Tuple[int, int]] = []

    ring = (
        [(s, 0.0) for s in params[0][:-1]]
        + [(1.0, t) for t in params[1][:-1]]
        + [(s, 1.0) for s in params[0][::-1][:-1]]
        + [(0.0, t) for t in params[1][::-1][:-1]]
    )
    ring_index = [points.add(x, y) for x, y in ring]
    segments.extend(zip(ring_index, ring_index[1:] + ring_index[:1]))

    for d in (0, 1):
        for b in lines.get(d, ()):
            for k, hole in enumerate(cell.holes):
                lo, hi = hole.bounds()[d], hole.bounds()[d + 2]
                if lo - 1e-12 <= b <= hi + 1e-12:
                    raise MeshFailure(f"coefficient interface y{d + 1}={b} crosses hole {k}")
            chain = [points.add(*((b, t) if d == 0 else (t, b))) for t in params[1 - d]]
            segments.extend(zip(chain[:-1], chain[1:]))

    hole_polygons = []
    hole_points: List[int] = []
    for hole in cell.holes:
        outline = hole.boundary_points(h)
        chain = [points.add(float(x), float(y)) for x, y in outline]
        segments.extend(zip(chain, chain[1:] + chain[:1]))
        hole_points.extend(chain)
        hole_polygons.append(shapely.Polygon(outline))

    area = math.sqrt(3.0) / 4.0 * h * h
    data = {"vertices": np.array(points.points), "segments": np.array(segments, dtype=np.int32)}
    result = triangle.triangulate(data, f"pq30YYa{area:.12g}Q")
    if "triangles" not in result or len(result["triangles"]) == 0:
        raise MeshFailure(f"triangulation of the cell failed at h={h}")
    vertices = np.asarray(result["vertices"], dtype=float)
    if len(vertices) >= len(points.points) and not np.allclose(vertices[: len(points.points)], data["vertices"]):
        raise MeshFailure("triangulation moved input vertices")
    triangles = _orient(vertices, np.asarray(result["triangles"], dtype=np.int64))

    centroids = vertices[triangles].mean(axis=1)
    regions = np.full(len(triangles), MATRIX_REGION, dtype=np.int64)
    for k, polygon in enumerate(hole_polygons):
        regions[shapely.contains_xy(polygon, centroids[:, 0], centroids[:, 1])] = k
    markers = np.zeros(len(vertices), dtype=np.int8)
    markers[hole_points] = HOLE_BOUNDARY
    return vertices, triangles, regions, markers


def mesh_unit_cell(
    cell: geometry.CellGeometry,
    h: float,
    periodic: bool = True,
    material: Optional[geometry.MaterialTensor] = None,
) -> TriMesh:
    """Conforming mesh of Y with hole triangles labelled by hole index."""
    if h <= 0:
        raise MeshFailure(f"mesh size must be positive, got {h}")
    if cell.holes:
        limit = _resolution_limit(cell)
        if h > 0.5 * limit * (1.0 + 1e-9):
            raise MeshFailure(f"h={h:.6g} cannot resolve the holes; need h <= {0.5 * limit:.6g}")
    lines = material.interfaces() if material is not None else {0: (), 1: ()}
    count = max(1, math.ceil(1.0 / h - 1e-9))
    aligned = all(abs(b * count - round(b * count)) < 1e-9 for d in lines for b in lines[d])

    if not cell.holes and aligned:
        vertices, triangles = _structured((0.0, 0.0), (1.0, 1.0), count, count)
        regions = np.full(len(triangles), MATRIX_REGION, dtype=np.int64)
        markers = np.zeros(len(vertices), dtype=np.int8)
    else:
        vertices, triangles, regions, markers = _triangulate_cell(cell, h, count, lines)

    on_face = np.any((vertices < 1e-12) | (vertices > 1.0 - 1e-12), axis=1)
    markers[on_face] = OUTER
    mesh = TriMesh(
        vertices=vertices,
        triangles=triangles,
        vertex_markers=markers,
        triangle_regions=regions,
        h=float(h),
        periodic_master=_periodic_masters(vertices) if periodic else None,
    )
    if abs(mesh.areas.sum() - 1.0) > 1e-12:
        raise MeshFailure(f"cell mesh area {mesh.areas.sum():.15g} differs from 1")
    utils.log_to_output(
        f"Cell mesh: h={h:.6g}, {mesh.num_vertices} vertices, {mesh.num_triangles} triangles"
    )
    return mesh


def tile_cell_mesh(cell_mesh: TriMesh, domain: geometry.PerforatedDomain) -> TriMesh:
    """Copies a periodic cell mesh into every epsilon-cell of a cell-aligned domain."""
    eps = domain.epsilon
    nx, ny = domain.cell_counts
    i0 = round(domain.omega.origin[0] * domain.n)
    j0 = round(domain.omega.origin[1] * domain.n)
    holes_per_cell = len(domain.cell.holes)
    nv = cell_mesh.num_vertices
    units, triangles, regions, hole_flags = [], [], [], []
    tile = 0
    for i in range(i0, i0 + nx):
        for j in range(j0, j0 + ny):
            units.append(cell_mesh.vertices + np.array([i, j], dtype=float))
            triangles.append(cell_mesh.triangles + tile * nv)
            cell_regions = cell_mesh.triangle_regions
            regions.append(np.where(cell_regions >= 0, tile * holes_per_cell + cell_regions, MATRIX_REGION))
            hole_flags.append(cell_mesh.vertex_markers == HOLE_BOUNDARY)
            tile += 1
    unit_coords = np.vstack(units)
    keys = np.round(unit_coords * _KEY_SCALE).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    vertices = eps * unit_coords[first]
    cell_coords = np.vstack([cell_mesh.vertices] * tile)[first]

    markers = np.zeros(len(vertices), dtype=np.int8)
    on_hole = np.zeros(len(vertices), dtype=bool)
    on_hole[inverse[np.concatenate(hole_flags)]] = True
    markers[on_hole] = HOLE_BOUNDARY
    markers[domain.distance_to_boundary(vertices) < 1e-9 * eps] = OUTER
    mesh = TriMesh(
        vertices=vertices,
        triangles=inverse[np.vstack(triangles)],
        vertex_markers=markers,
        triangle_regions=np.concatenate(regions),
        h=cell_mesh.h * eps,
        cell_coords=cell_coords,
        epsilon=eps,
    )
    if abs(mesh.areas.sum() - domain.omega.area) > 1e-12 * max(1.0, domain.omega.area):
        raise MeshFailure("tiled mesh does not partition the domain")
    return mesh


def mesh_domain(
    domain: geometry.PerforatedDomain,
    h: float,
    material: Optional[geometry.MaterialTensor] = None,
) -> TriMesh:
    """Conforming mesh of Omega; hole triangles stay in the mesh with their labels."""
    if not domain.is_cell_aligned:
        raise MeshFailure("domain meshes need Omega to be a union of epsilon-cells")
    eps = domain.epsilon
    if domain.cell.holes and h > 0.25 * eps * (1.0 + 1e-9):
        raise MeshFailure(f"h={h:.6g} does not resolve the microstructure (need h <= epsilon/4)")
    cell_mesh = mesh_unit_cell(domain.cell, h / eps, periodic=True, material=material)
    mesh = tile_cell_mesh(cell_mesh, domain)
    utils.log_to_output(
        f"Domain mesh: epsilon={eps:.6g}, h={mesh.h:.6g}, {mesh.num_vertices} vertices, "
        f"{len(mesh.hole_boundary_groups)} hole loops"
    )
    return mesh


def structured_rectangle(omega: geometry.Rectangle, h: float) -> TriMesh:
    """Unperforated structured mesh of a rectangle, used for homogenized problems."""
    nx = max(1, math.ceil(omega.size[0] / h - 1e-9))
    ny = max(1, math.ceil(omega.size[1] / h - 1e-9))
    vertices, triangles = _structured(omega.origin, omega.size, nx, ny)
    markers = np.where(omega.distance_to_boundary(vertices) < 1e-12, OUTER, INTERIOR).astype(np.int8)
    return TriMesh(
        vertices=vertices,
        triangles=triangles,
        vertex_markers=markers,
        triangle_regions=np.full(len(triangles), MATRIX_REGION, dtype=np.int64),
        h=max(omega.size[0] / nx, omega.size[1] / ny),
    )


# **********************************************************
# Plain-text mesh and CSV field formats.
# **********************************************************
def write_mesh(mesh: TriMesh, path: Union[str, pathlib.Path]) -> None:
    lines = [f"h {mesh.h!r}"]
    if mesh.epsilon is not None:
        lines.append(f"e {mesh.epsilon!r}")
    lines.extend(f"v {x!r} {y!r}" for x, y in mesh.vertices.tolist())
    lines.extend(f"t {i} {j} {k}" for i, j, k in mesh.triangles.tolist())
    lines.extend(f"m v {i} {m}" for i, m in enumerate(mesh.vertex_markers.tolist()))
    lines.extend(f"m t {i} {r}" for i, r in enumerate(mesh.triangle_regions.tolist()))
    if mesh.periodic_master is not None:
        lines.extend(f"m p {i} {p}" for i, p in enumerate(mesh.periodic_master.tolist()))
    if mesh.cell_coords is not None:
        lines.extend(f"c {i} {a!r} {b!r}" for i, (a, b) in enumerate(mesh.cell_coords.tolist()))
    pathlib.Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mesh(path: Union[str, pathlib.Path]) -> TriMesh:
    h, epsilon = None, None
    vertices, triangles, cells = [], [], []
    markers: Dict[str, List[Tuple[int, int]]] = {"v": [], "t": [], "p": []}
    for number, raw in enumerate(pathlib.Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            tag = parts[0]
            if tag == "h":
                h = float(parts[1])
            elif tag == "e":
                epsilon = float(parts[1])
            elif tag == "v":
                vertices.append((float(parts[1]), float(parts[2])))
            elif tag == "t":
                triangles.append((int(parts[1]), int(parts[2]), int(parts[3])))
            elif tag == "m":
                markers[parts[1]].append((int(parts[2]), int(parts[3])))
            elif tag == "c":
                cells.append((int(parts[1]), float(parts[2]), float(parts[3])))
            else:
                raise MeshFormatError(f"line {number}: unknown record {tag!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise MeshFormatError(f"line {number}: malformed record {raw!r}") from exc
    if h is None or not vertices or not triangles:
        raise MeshFormatError("mesh file needs h, vertex and triangle records")

    def _column(records, size, default):
        out = np.full(size, default, dtype=np.int64)
        for index, value in records:
            out[index] = value
        return out

    nv = len(vertices)
    cell_coords = None
    if cells:
        cell_coords = np.zeros((nv, 2))
        for index, y1, y2 in cells:
            cell_coords[index] = (y1, y2)
    return TriMesh(
        vertices=np.array(vertices),
        triangles=np.array(triangles, dtype=np.int64),
        vertex_markers=_column(markers["v"], nv, INTERIOR).astype(np.int8),
        triangle_regions=_column(markers["t"], len(triangles), MATRIX_REGION),
        h=h,
        periodic_master=_column(markers["p"], nv, -1) if markers["p"] else None,
        cell_coords=cell_coords,
        epsilon=epsilon,
    )


def write_field_csv(values: np.ndarray, path: Union[str, pathlib.Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=["vertex", "value"])
        writer.writeheader()
        for index, value in enumerate(np.asarray(values, dtype=float).tolist()):
            writer.writerow({"vertex": index, "value": repr(value)})


def read_field_csv(path: Union[str, pathlib.Path]) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as stream:
        rows = list(csv.DictReader(stream))
    try:
        values = np.zeros(len(rows))
        for row in rows:
            values[int(row["vertex"])] = float(row["value"])
    except (KeyError, IndexError, ValueError) as exc:
        raise MeshFormatError(f"malformed field file {path}") from exc
    return values
