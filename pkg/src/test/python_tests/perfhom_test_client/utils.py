# Licensed under the MIT License.
"""
Builders for meshes, domains and fields shared by the tests.
"""
import functools
import json
import pathlib

import numpy as np

import perfhom_fem as fem
import perfhom_geometry as geometry
import perfhom_mesh as meshing


def disk_cell(radius: float = 0.25, kappa: float = 0.2) -> geometry.CellGeometry:
    """Unit cell with one centered disk hole."""
    return geometry.build_cell_geometry([geometry.Hole.disk((0.5, 0.5), radius)], kappa)


def empty_cell(kappa: float = 0.2) -> geometry.CellGeometry:
    return geometry.build_cell_geometry([], kappa)


@functools.lru_cache(maxsize=None)
def disk_cell_mesh(h: float = 0.0625) -> meshing.TriMesh:
    """Periodic mesh of the disk cell."""
    return meshing.mesh_unit_cell(disk_cell(), h, periodic=True)


@functools.lru_cache(maxsize=None)
def plain_cell_mesh(h: float = 0.125) -> meshing.TriMesh:
    return meshing.mesh_unit_cell(empty_cell(), h, periodic=True)


@functools.lru_cache(maxsize=None)
def laminate_cell_mesh(h: float = 0.125) -> meshing.TriMesh:
    return meshing.mesh_unit_cell(empty_cell(), h, periodic=True, material=laminate())


def laminate() -> geometry.MaterialTensor:
    """Half-half {1, 4} laminate across y1."""
    return geometry.MaterialTensor.laminate([1.0, 4.0], [0.5], direction=0)


@functools.lru_cache(maxsize=None)
def disk_domain(n: int = 4) -> geometry.PerforatedDomain:
    return geometry.build_perforated_domain(n, disk_cell())


@functools.lru_cache(maxsize=None)
def disk_domain_mesh(n: int = 4, h_ratio: int = 8) -> meshing.TriMesh:
    """Tiled mesh of the perforated unit square with h = epsilon / h_ratio."""
    return meshing.tile_cell_mesh(disk_cell_mesh(1.0 / h_ratio), disk_domain(n))


@functools.lru_cache(maxsize=None)
def unit_square_mesh(h: float = 0.125) -> meshing.TriMesh:
    return meshing.structured_rectangle(geometry.Rectangle(), h)


def dirichlet_constraints(mesh: meshing.TriMesh, function) -> fem.Constraints:
    """Dirichlet constraints on the outer loop from a point function."""
    loop = mesh.boundary_loop
    return fem.Constraints(dirichlet_nodes=loop, dirichlet_values=function(mesh.vertices[loop]))


def write_json(path: pathlib.Path, payload) -> pathlib.Path:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def affine(points: np.ndarray) -> np.ndarray:
    return np.asarray(points)[:, 0]
