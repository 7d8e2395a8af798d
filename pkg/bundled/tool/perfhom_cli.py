# Licensed under the MIT License.
"""Command line entry point: `perfhom cell|solve|green|rates|accept`."""
from __future__ import annotations

import argparse
import json
import logging
import os
import pathlib
import sys
from typing import Dict, List, Optional, Sequence


# **********************************************************
# Update sys.path before importing any bundled libraries.
# **********************************************************
def update_sys_path(path_to_add: str, strategy: str) -> None:
    """Add given path to `sys.path`."""
    if path_to_add not in sys.path and os.path.isdir(path_to_add):
        if strategy == "useBundled":
            sys.path.insert(0, path_to_add)
        elif strategy == "fromEnvironment":
            sys.path.append(path_to_add)


# Ensure that we can import numerical libraries, and other bundled libraries.
update_sys_path(
    os.fspath(pathlib.Path(__file__).parent.parent / "libs"),
    os.getenv("PERFHOM_IMPORT_STRATEGY", "useBundled"),
)
update_sys_path(os.fspath(pathlib.Path(__file__).parent), "useBundled")

# **********************************************************
# Imports needed for the runner go below this.
# **********************************************************
# pylint: disable=wrong-import-position,import-error
import attrs
import numpy as np

import perfhom_bvp as bvp
import perfhom_cell as cell
import perfhom_geometry as geometry
import perfhom_mesh as meshing
import perfhom_studies as studies
import perfhom_utils as utils

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def _point(text: str) -> List[float]:
    try:
        x, y = (float(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y but got {text!r}") from exc
    return [x, y]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perfhom", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=pathlib.Path, help="JSON study config (a list of configs for accept)")
    common.add_argument("--out", type=pathlib.Path, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--verbose", "-v", action="store_true", help="log debug messages")
    verbs = parser.add_subparsers(dest="verb", required=True)

    verbs.add_parser("cell", parents=[common], help="homogenized tensors of the configured cell")

    solve = verbs.add_parser("solve", parents=[common], help="one boundary value problem")
    solve.add_argument("--data", help="boundary data preset, overrides the config")
    solve.add_argument("--mesh", action="store_true", help="also write the mesh")

    green = verbs.add_parser("green", parents=[common], help="discrete Green's function")
    green.add_argument("--source", type=_point, required=True, help="source point x,y")

    rates = verbs.add_parser("rates", parents=[common], help="one study with rate fits and thresholds")
    rates.add_argument("--study", choices=studies.STUDIES, help="overrides the config study")

    verbs.add_parser("accept", parents=[common], help="the full acceptance suite")
    return parser


def _load_config(args: argparse.Namespace, study: str) -> studies.StudyConfig:
    data: Dict = {}
    if args.config:
        data = json.loads(args.config.read_text(encoding="utf-8"))
    data.setdefault("study", study)
    if getattr(args, "study", None):
        data["study"] = args.study
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out"] = str(args.out)
    return studies.structure_config(data)


def _write_json(payload, out: Optional[pathlib.Path], name: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n", encoding="utf-8")


def run_cell(args: argparse.Namespace) -> int:
    config = _load_config(args, "cell")
    utils.log_settings("Cell settings", studies.unstructure_config(config))
    material = geometry.material_from_spec(config.geometry)
    mesh = meshing.mesh_unit_cell(
        geometry.cell_from_spec(config.geometry), config.cell_h, periodic=True, material=material
    )
    tensors = utils.run_parallel(
        lambda d: cell.cell_tensor(mesh, material, d, 1, config.tol), config.deltas, args.jobs
    )
    _write_json([t.as_dict() for t in tensors], args.out, "cell.json")
    return EXIT_OK


def _domain(config: studies.StudyConfig):
    epsilon = config.epsilons[0]
    material = geometry.material_from_spec(config.geometry)
    domain = geometry.domain_from_spec(config.geometry, round(1.0 / epsilon))
    mesh = meshing.mesh_domain(domain, epsilon / config.h_ratio, material)
    return epsilon, config.deltas[0], material, domain, mesh


def run_solve(args: argparse.Namespace) -> int:
    config = _load_config(args, "transmission")
    if args.data:
        config = studies.validate_config(attrs.evolve(config, data=args.data))
    utils.log_settings("Solve settings", studies.unstructure_config(config))
    epsilon, delta, material, domain, mesh = _domain(config)
    data = bvp.boundary_data(config.data)
    solver = bvp.solve_dirichlet if data.kind == bvp.DIRICHLET else bvp.solve_neumann
    solution = solver(domain, mesh, material, epsilon, delta, data, config.tol)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        meshing.write_field_csv(solution.field.values, args.out / "u.csv")
        if args.mesh:
            meshing.write_mesh(mesh, args.out / "mesh.txt")
    summary = {
        "epsilon": epsilon,
        "delta": delta,
        "data": data.name,
        "unknowns": int(mesh.num_vertices),
        "energies": solution.energies,
        "data_norm": solution.data_norm,
        "energy_constant": solution.energy_constant,
        "diagnostics": solution.diagnostics,
    }
    _write_json(summary, args.out, "solve.json")
    return EXIT_OK


def run_green(args: argparse.Namespace) -> int:
    config = _load_config(args, "green")
    utils.log_settings("Green settings", studies.unstructure_config(config))
    epsilon, delta, material, domain, mesh = _domain(config)
    green = bvp.greens_function(domain, mesh, material, epsilon, delta, args.source, config.tol)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        meshing.write_field_csv(green.field.values, args.out / "green.csv")
    summary = {
        "epsilon": epsilon,
        "delta": delta,
        "source": list(green.source),
        "max": float(np.max(green.field.values)),
        "min": float(np.min(green.field.values)),
    }
    _write_json(summary, args.out, "green.json")
    return EXIT_OK


def run_rates(args: argparse.Namespace) -> int:
    config = _load_config(args, "fem")
    result = studies.run_study(config, args.jobs)
    return EXIT_OK if result.passed else EXIT_FAILED


def run_accept(args: argparse.Namespace) -> int:
    configs = studies.read_suite(args.config) if args.config else studies.acceptance_configs()
    out = args.out or pathlib.Path("perfhom-results")
    results = studies.run_suite(configs, out, args.jobs, args.seed)
    failed = [r.study for r in results if not r.passed]
    if failed:
        utils.log_error(f"Acceptance failed for: {', '.join(failed)}")
        return EXIT_FAILED
    utils.log_always(f"Acceptance passed: {len(results)} studies")
    return EXIT_OK


_VERBS = {
    "cell": run_cell,
    "solve": run_solve,
    "green": run_green,
    "rates": run_rates,
    "accept": run_accept,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _VERBS[args.verb](args)
    except utils.PerfhomError as exc:
        utils.log_error(f"{args.verb} failed: {exc}")
        return EXIT_ERROR
    except ValueError as exc:
        utils.log_error(f"{args.verb}: invalid input: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
