"""
revert-field command line.

    revert-field bench-distance --envs 100 --queries 40000 --seed 0 --out report.json
    revert-field calibrate-noise --noise-sd 0.005 --point-gap 0.04 --lengthscale 0.03 --out run.json
    revert-field field-grid --cloud pts.csv --kernel rq --lengthscale 0.03 --grid 200x200 --out grid.csv
    revert-field ugw-sim --seed 0 --out archive/
    revert-field echoloc --measurements archive/ --oracle ours --out errors.csv
    revert-field map --measurements archive/ --kernel rq --alpha 1e-3 --q 24 --out map.json

Every subcommand accepts --config FILE (JSON run configuration); flags
override the file. Exit codes: 0 success, 2 configuration or usage error,
1 runtime error.
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import __version__
from .apps.echoloc import run_echolocation
from .apps.mapping import latent_grid, plate_grid, run_mapping
from .bench.simbench import calibration_scene, run_benchmark
from .core.exceptions import ConfigError, RevertFieldError
from .core.models import RunConfig
from .fields.calibrate import learn_sigma_n
from .fields.field_factory import FieldFactory
from .fields.kernels import KernelModel
from .storage import files
from .ugw.ugw_signal import PlateScene, grid_envelopes, simulate_grid_measurements
from .utils.logger import configure_logging
from .utils.parallel import get_runtime_settings

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

console = Console(stderr=True)


class ArgumentParser(argparse.ArgumentParser):
    """Raises ConfigError instead of exiting, so run() owns the exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: error: {message}")


def grid_shape(text: str):
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 200x200, got {text!r}")
    if rows < 2 or cols < 2:
        raise argparse.ArgumentTypeError(f"grid needs at least 2x2 points, got {text!r}")
    return rows, cols


def method_list(text: str) -> List[str]:
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="revert-field", description="Reverting-function distance fields")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def add(name, help_text):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", help="JSON run configuration")
        sub.add_argument("--seed", type=int, help="Master seed")
        sub.add_argument("--verbose", action="store_true", help="Also log to the console")
        return sub

    bench = add("bench-distance", "Benchmark distance fields on simulated environments")
    bench.add_argument("--envs", type=int)
    bench.add_argument("--queries", type=int)
    bench.add_argument("--methods", type=method_list)
    bench.add_argument("--sigma-n", type=float, help="Fixed sigma_n instead of calibrating per kernel")
    bench.add_argument("--out", required=True, help="Report JSON")
    bench.add_argument("--scatter", help="Error scatter CSV (default: <out>.scatter.csv)")

    calib = add("calibrate-noise", "Learn sigma_n on a simulated calibration scene")
    calib.add_argument("--noise-sd", type=float)
    calib.add_argument("--point-gap", type=float)
    calib.add_argument("--lengthscale", type=float)
    calib.add_argument("--kernel", choices=["se", "rq", "matern"])
    calib.add_argument("--out", required=True, help="Run configuration JSON with field.sigma_n set")

    grid = add("field-grid", "Query a distance field over a regular grid")
    grid.add_argument("--cloud", required=True, help="Point-cloud CSV")
    grid.add_argument("--kernel", choices=["se", "rq", "matern"])
    grid.add_argument("--lengthscale", type=float)
    grid.add_argument("--sigma-n", type=float)
    grid.add_argument("--method", choices=["ours", "loggpis", "smoothmin", "fused"])
    grid.add_argument("--grid", type=grid_shape, default=(200, 200), help="ROWSxCOLS")
    grid.add_argument("--extent", type=float, nargs=4, metavar=("XMIN", "YMIN", "XMAX", "YMAX"),
                      help="Grid extent (default: cloud bounds padded by 10%%)")
    grid.add_argument("--out", required=True, help="Grid CSV")

    ugw = add("ugw-sim", "Simulate guided-wave measurements on the plate grid")
    ugw.add_argument("--snr-db", type=float)
    ugw.add_argument("--noiseless", action="store_true")
    ugw.add_argument("--rows", type=int)
    ugw.add_argument("--cols", type=int)
    ugw.add_argument("--scene", help="Plate JSON (PlateConfig)")
    ugw.add_argument("--envelopes", help="Directory for per-position envelope CSVs")
    ugw.add_argument("--out", required=True, help="Measurement archive directory")

    echo = add("echoloc", "Particle-filter echolocation over random grid trajectories")
    echo.add_argument("--measurements", help="Measurement archive (simulated when omitted)")
    echo.add_argument("--scene", help="Plate JSON (PlateConfig)")
    echo.add_argument("--traj", help="JSON list of walks (lists of row-major grid cell indices)")
    echo.add_argument("--oracle", choices=["ours", "loggpis", "rect"])
    echo.add_argument("--trajectories", type=int)
    echo.add_argument("--steps", type=int)
    echo.add_argument("--particles", type=int)
    echo.add_argument("--beta", type=float)
    echo.add_argument("--out", required=True, help="Errors CSV")

    mapping = add("map", "Two-stage mapping from a measurement archive")
    mapping.add_argument("--measurements", required=True, help="Measurement archive")
    mapping.add_argument("--kernel", choices=["se", "rq", "matern"])
    mapping.add_argument("--alpha", type=float)
    mapping.add_argument("--q", type=int)
    mapping.add_argument("--lengthscale", type=float)
    mapping.add_argument("--mode", choices=["two-stage", "envelope-only"])
    mapping.add_argument("--distance-method", choices=["ours", "loggpis"])
    mapping.add_argument("--grid-out", help="Field-grid CSV of the mapped field")
    mapping.add_argument("--out", required=True, help="Map JSON")
    return parser


# flag -> dotted config key, per subcommand
OVERRIDES = {
    "bench-distance": {"envs": "bench.envs", "queries": "bench.queries", "methods": "bench.methods",
                       "sigma_n": "bench.sigma_n"},
    "calibrate-noise": {"noise_sd": "calibration.noise_sd", "point_gap": "calibration.point_gap",
                        "lengthscale": "kernel.lengthscale", "kernel": "kernel.kind"},
    "field-grid": {"kernel": "kernel.kind", "lengthscale": "kernel.lengthscale", "sigma_n": "field.sigma_n",
                   "method": "field.method"},
    "ugw-sim": {"snr_db": "ugw.snr_db", "rows": "ugw.grid_rows", "cols": "ugw.grid_cols"},
    "echoloc": {"oracle": "filter.distance_oracle", "trajectories": "filter.trajectories",
                "steps": "filter.steps", "particles": "filter.n_particles", "beta": "filter.beta"},
    "map": {"kernel": "kernel.kind", "alpha": "mapping.reg_alpha", "q": "mapping.q",
            "lengthscale": "mapping.lengthscale", "mode": "mapping.mode",
            "distance_method": "mapping.distance_method"},
}


def _set_key(data: Dict[str, Any], dotted: str, value) -> None:
    *parents, leaf = dotted.split(".")
    node = data
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def _read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read configuration {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"configuration {path} must hold a JSON object")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file overlaid by command-line flags, validated."""
    data = _read_config_file(args.config) if args.config else {}
    if getattr(args, "scene", None):
        data["plate"] = _read_config_file(args.scene)
    if args.seed is not None:
        data["seed"] = args.seed
    for flag, key in OVERRIDES.get(args.command, {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            _set_key(data, key, value)
    if getattr(args, "noiseless", False):
        _set_key(data, "ugw.snr_db", None)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}")


def _metres(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def cmd_bench_distance(args, config: RunConfig, logger: logging.Logger) -> List[str]:
    with console.status(f"[bold green]Benchmarking {config.bench.envs} environments..."):
        report = run_benchmark(config, logger=logger)
    scatter_path = args.scatter or f"{args.out}.scatter.csv"
    files.write_json(args.out, report)
    files.write_scatter_csv(scatter_path, report.scatter)

    table = Table(title="Distance-field benchmark")
    for column in ("method", "close RMSE [m]", "far RMSE [m]", "RMSE [m]", "coverage"):
        table.add_column(column)
    for m in report.methods:
        table.add_row(m.method, _metres(m.close_rmse), _metres(m.far_rmse), _metres(m.rmse), f"{m.coverage:.4f}")
    console.print(table)
    if report.fused_wins is not None:
        console.print(f"fused <= min(GP, smooth-min) on {report.fused_wins}/{report.envs} environments")
    return [args.out, scatter_path]


def cmd_calibrate_noise(args, config: RunConfig, logger: logging.Logger) -> List[str]:
    kernel = KernelModel.from_config(config.kernel)
    cloud, grid, gt = calibration_scene(config.bench, config.calibration, kernel.lengthscale, config.seed)
    with console.status("[bold green]Learning sigma_n..."):
        sigma_n = learn_sigma_n(cloud, kernel, grid, gt, config.calibration, logger=logger)
    config = config.model_copy(update={"field": config.field.model_copy(update={"sigma_n": sigma_n})})
    files.write_json(args.out, config)
    console.print(f"sigma_n = {sigma_n:.6e} ({kernel.kind.value}, l={kernel.lengthscale})")
    return [args.out]


def cmd_field_grid(args, config: RunConfig, logger: logging.Logger) -> List[str]:
    cloud = files.read_point_cloud(args.cloud)
    args.inputs.append(files.input_record("cloud", args.cloud))
    if cloud.dim != 2:
        raise ConfigError(f"field-grid works on 2-D clouds, got dimension {cloud.dim}")
    if args.extent:
        xmin, ymin, xmax, ymax = args.extent
    else:
        lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
        pad = 0.1 * np.maximum(hi - lo, 1e-3)
        (xmin, ymin), (xmax, ymax) = lo - pad, hi + pad
    rows, cols = args.grid
    gx, gy = np.meshgrid(np.linspace(xmin, xmax, cols), np.linspace(ymin, ymax, rows))
    points = np.column_stack([gx.ravel(), gy.ravel()])

    field = FieldFactory(config.kernel, config.field, logger=logger).create_field(cloud=cloud)
    files.write_field_grid(args.out, points, field.query(points))
    console.print(f"wrote {len(points)} {field.name} queries to {args.out}")
    return [args.out]


def cmd_ugw_sim(args, config: RunConfig, logger: logging.Logger) -> List[str]:
    scene = PlateScene.from_config(config.plate)
    with console.status("[bold green]Synthesizing measurements..."):
        positions, measurements = simulate_grid_measurements(scene, config.ugw, config.seed)
    files.save_measurements(args.out, config, positions, measurements)
    outputs = [args.out]
    if args.envelopes:
        for i, e in enumerate(grid_envelopes(measurements, config.ugw, scene.diagonal, logger=logger)):
            outputs.append(files.write_envelope_csv(os.path.join(args.envelopes, f"envelope_{i:03d}.csv"), e))
    console.print(f"saved {len(positions)} measurements to {args.out}")
    return outputs


def _load_walks(path: Optional[str]):
    if not path:
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read trajectories {path}: {e}")
    if not isinstance(data, list):
        raise ConfigError(f"trajectories {path} must hold a JSON list of walks")
    return [np.asarray(walk, dtype=int) for walk in data]


def _load_archive(args, config: RunConfig, logger: logging.Logger):
    """Positions and measurements; the archive's plate and signal settings replace the run's."""
    path = args.measurements
    archived, positions, measurements = files.load_measurements(path)
    args.inputs.append(files.input_record("measurements", path))
    config.plate = archived.plate
    config.ugw = archived.ugw
    logger.info(f"Loaded {len(positions)} measurements from {path}")
    return positions, measurements


def cmd_echoloc(args, config: RunConfig, logger: logging.Logger) -> List[str]:
    positions = measurements = None
    if args.measurements:
        positions, measurements = _load_archive(args, config, logger)
    walks = _load_walks(args.traj)
    if walks is not None:
        args.inputs.append(files.input_record("trajectories", args.traj))
        args.walks = walks
    count = len(walks) if walks is not None else config.filter.trajectories
    with console.status(f"[bold green]Running {count} trajectories..."):
        errors, summary = run_echolocation(config, measurements, positions, walks=walks, logger=logger)
    files.write_errors_csv(args.out, errors)
    console.print(f"median error after step {config.filter.burn_in}: {summary.converged_median:.4f} m")
    return [args.out]


def cmd_map(args, config: RunConfig, logger: logging.Logger) -> List[str]:
    positions, measurements = _load_archive(args, config, logger)
    with console.status("[bold green]Mapping..."):
        state, report = run_mapping(config, positions, measurements, logger=logger)
    files.write_json(args.out, report)
    outputs = [args.out]
    if args.grid_out:
        grid = plate_grid(PlateScene.from_config(config.plate), config.mapping.field_grid)
        outputs.append(files.write_field_grid(args.grid_out, grid, latent_grid(state, grid)))
    for stage in report.stages:
        console.print(f"{stage.stage}: cost {stage.initial_cost:.4e} -> {stage.final_cost:.4e} ({stage.reason})")
    if report.interior_rmse is not None:
        console.print(f"interior distance RMSE: {report.interior_rmse:.4f} m")
    return outputs


COMMANDS = {
    "bench-distance": cmd_bench_distance,
    "calibrate-noise": cmd_calibrate_noise,
    "field-grid": cmd_field_grid,
    "ugw-sim": cmd_ugw_sim,
    "echoloc": cmd_echoloc,
    "map": cmd_map,
}


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = resolve_config(args)
    except ConfigError as e:
        console.print(f"[red]{e}[/red]")
        return EXIT_CONFIG
    except SystemExit as e:
        # --help / --version
        return e.code if isinstance(e.code, int) else EXIT_OK

    settings = get_runtime_settings()
    logger = configure_logging(file_path=settings.log_file or None,
                               level=getattr(logging, settings.log_level.upper(), logging.INFO),
                               print_to_console=args.verbose)
    args.inputs, args.walks = [], None
    try:
        outputs = COMMANDS[args.command](args, config, logger)
        for output in outputs:
            files.write_manifest(output, args.command, config, outputs, inputs=args.inputs, walks=args.walks)
    except ConfigError as e:
        console.print(f"[red]{e}[/red]")
        return EXIT_CONFIG
    except (RevertFieldError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        console.print(f"[red]{args.command} failed: {e}[/red]")
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
