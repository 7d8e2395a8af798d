# Licensed under the MIT License.
"""
Default configurations used by the tests.
"""

DISK_GEOMETRY = {
    "cell": {"holes": [{"type": "disk", "center": [0.5, 0.5], "radius": 0.25}], "kappa": 0.2},
    "n": 4,
}

PLAIN_GEOMETRY = {"cell": {"holes": [], "kappa": 0.2}, "n": 4}

LAMINATE_GEOMETRY = {
    "cell": {"holes": [], "kappa": 0.2},
    "material": {"kind": "laminate", "values": [1.0, 4.0], "breakpoints": [0.5], "direction": 0},
}

QUICK_CELL_STUDY = {
    "study": "cell",
    "geometry": DISK_GEOMETRY,
    "deltas": [0.0, 1.0],
    "cell_h": 0.125,
}

QUICK_FEM_STUDY = {
    "study": "fem",
    "hs": [0.25, 0.125, 0.0625],
}

QUICK_SOLVE = {
    "study": "transmission",
    "geometry": DISK_GEOMETRY,
    "epsilons": [0.25],
    "deltas": [0.5],
    "h_ratio": 8,
    "data": "affine",
}
