"""
Full-scale benchmark, echolocation and mapping runs with the orderings
expected of them. Slow: run by hand, not from the test suite.

    python scripts/run_acceptance.py [--seed 0] [--out acceptance/]
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

# Add project src to Python path
project_root = Path(__file__).parent.parent
sys.path.append(str(project_root / "src"))

from revert_field.apps.echoloc import run_echolocation
from revert_field.apps.mapping import run_mapping
from revert_field.bench.simbench import (
    GroundTruthOracle,
    fit_log_profile,
    generate_environment,
    query_grid,
    run_benchmark,
    sample_cloud,
    smooth_profile,
)
from revert_field.core.models import FilterConfig, MapConfig, RunConfig
from revert_field.fields.distance import distance_gradient, query_batch
from revert_field.fields.gp_field import build_model, infer_batch
from revert_field.fields.kernels import KernelModel
from revert_field.storage import files
from revert_field.ugw.ugw_signal import (
    PlateScene,
    TemplateBank,
    distance_step,
    envelope,
    resolve_first_echo,
    simulate_grid_measurements,
    synthesize_measurement,
)
from revert_field.utils.logger import configure_logging
from revert_field.utils.seeding import derived_seed, module_rng


load_dotenv()
logger = configure_logging(print_to_console=True)
console = Console()

# close-range RMSE each method should land within 50% of [m]
CLOSE_REFERENCE = {"ours-rq": 0.0076, "loggpis": 0.0132, "smoothmin": 0.0190}
GRADIENT_PAIRS = 1000
FD_STEP = 1e-6  # [m]
ROUND_TRIP_SOURCES = 100


def check(table: Table, name: str, passed: bool, detail: str) -> bool:
    table.add_row(name, "[green]pass[/green]" if passed else "[red]FAIL[/red]", detail)
    return passed


def benchmark_checks(config: RunConfig, out: str, table: Table):
    with console.status(f"[bold green]Benchmarking {config.bench.envs} environments..."):
        report = run_benchmark(config, logger=logger)
    files.write_json(os.path.join(out, "report.json"), report)
    files.write_scatter_csv(os.path.join(out, "scatter.csv"), report.scatter)

    close = {m.method: m.close_rmse for m in report.methods}
    coverage = {m.method: m.coverage for m in report.methods}
    gp_methods = ["ours-rq", "ours-se", "ours-matern"]
    ok = check(table, "close-range: ours < loggpis",
               close["ours-rq"] < close["loggpis"] and close["ours-se"] < close["loggpis"],
               f"rq {close['ours-rq']:.4f}, se {close['ours-se']:.4f}, loggpis {close['loggpis']:.4f}")
    ok &= check(table, "close-range: smooth-min worst",
                all(close["smoothmin"] > close[m] for m in gp_methods),
                f"smoothmin {close['smoothmin']:.4f}")
    ok &= check(table, "close-range magnitudes", all(
        close[m] is not None and 0.5 * ref <= close[m] <= 1.5 * ref for m, ref in CLOSE_REFERENCE.items()),
        ", ".join(f"{m} {close[m] or float('nan'):.4f} (ref {ref})" for m, ref in CLOSE_REFERENCE.items()))
    ok &= check(table, "coverage", coverage["ours-se"] < 1.0 and all(
        coverage[m] == 1.0 for m in coverage if m != "ours-se"),
        ", ".join(f"{m} {c:.4f}" for m, c in coverage.items()))

    log_samples = [s for s in report.scatter if s.method == "loggpis"]
    d, e = smooth_profile([s.true_distance for s in log_samples], [s.error for s in log_samples])
    fit = fit_log_profile(d, e)
    ok &= check(table, "loggpis error profile", fit.r_squared >= 0.9,
                f"a={fit.a:.4f}, b={fit.b:.2f}, R^2={fit.r_squared:.3f}")
    ok &= check(table, "fused wins", report.fused_wins is not None and report.fused_wins >= 0.8 * report.envs,
                f"{report.fused_wins}/{report.envs}")
    return ok, report.sigma_n.get("rq", config.field.sigma_n)


def field_checks(config: RunConfig, sigma_n: float, table: Table) -> bool:
    """Eikonal and gradient checks of the RQ field on one benchmark environment."""
    bench = config.bench
    kernel = KernelModel.from_config(config.kernel).with_kind("rq")
    env = generate_environment(derived_seed(config.seed, "simbench.env", 0), bench)
    cloud = sample_cloud(env, bench.gap, bench.noise_sd, derived_seed(config.seed, "simbench.cloud", 0))
    model = build_model(cloud, kernel, sigma_n)
    grid = query_grid(bench.workspace, bench.queries)
    gt = GroundTruthOracle(env, bench.oracle_spacing).distance(grid)
    l = kernel.lengthscale
    band = grid[(gt >= 0.5 * l) & (gt <= 3.0 * l)]
    norms = np.linalg.norm(distance_gradient(query_batch(model, band), kernel), axis=1)
    share = float(np.mean((norms >= 0.8) & (norms <= 1.2)))
    ok = check(table, "eikonal", share >= 0.9, f"{share:.1%} of {len(band)} queries with |grad d| in [0.8, 1.2]")

    rng = module_rng(config.seed, "acceptance.gradient")
    points = rng.uniform(0.0, bench.workspace, size=(GRADIENT_PAIRS, 2))
    analytic = infer_batch(model, points, gradient=True).grad
    numeric = np.empty_like(analytic)
    for axis in range(2):
        step = np.zeros(2)
        step[axis] = FD_STEP
        plus = infer_batch(model, points + step, gradient=False).o_hat
        minus = infer_batch(model, points - step, gradient=False).o_hat
        numeric[:, axis] = (plus - minus) / (2.0 * FD_STEP)
    rel = np.linalg.norm(analytic - numeric, axis=1) / np.maximum(np.linalg.norm(numeric, axis=1), 1e-300)
    ok &= check(table, "latent gradient", float(np.max(rel)) <= 1e-4,
                f"max relative error {np.max(rel):.2e} over {GRADIENT_PAIRS} queries")
    return ok


def ugw_checks(config: RunConfig, table: Table) -> bool:
    """First-echo round trip over random sources and the envelope self-peak."""
    cfg = config.ugw.model_copy(update={"snr_db": None})
    scene = PlateScene.from_config(config.plate)
    lo, hi = scene.bounds
    rng = module_rng(config.seed, "acceptance.sources")
    sources = rng.uniform(lo + 1e-3, hi - 1e-3, size=(ROUND_TRIP_SOURCES, 2))
    sources = sources[scene.contains(sources)]
    start, end = scene.edges
    hits = 0
    for p in sources:
        u, v = end - start, p - start
        truth = float(np.min(np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) / np.linalg.norm(u, axis=1)))
        echo = resolve_first_echo(synthesize_measurement(scene, p, cfg), cfg, scene.diagonal)
        hits += abs(echo - truth) <= 2.0 * distance_step(cfg)
    ok = check(table, "first-echo round trip", hits >= 0.95 * len(sources), f"{hits}/{len(sources)} within 2 steps")

    bank = TemplateBank.for_config(cfg, scene.diagonal)
    peaks = [envelope(np.array(bank.templates[i]), cfg, scene.diagonal, bank=bank).values[i]
             for i in range(1, len(bank), max(1, len(bank) // 20))]
    ok &= check(table, "envelope self-peak", all(abs(v - 1.0) <= 1e-6 for v in peaks),
                f"min {min(peaks):.8f} over {len(peaks)} templates")
    return ok


def echolocation_checks(config: RunConfig, positions, measurements, out: str, table: Table) -> bool:
    medians = {}
    for oracle in ("ours", "rect", "loggpis"):
        run = config.model_copy(update={"filter": config.filter.model_copy(update={"distance_oracle": oracle})})
        with console.status(f"[bold green]Echolocation with the {oracle} oracle..."):
            errors, summary = run_echolocation(run, measurements, positions, logger=logger)
        files.write_errors_csv(os.path.join(out, f"errors_{oracle}.csv"), errors)
        medians[oracle] = summary.converged_median

    ok = check(table, "echolocation error", medians["ours"] <= 0.02, f"median {medians['ours']:.4f} m")
    ok &= check(table, "rect oracle similar", abs(medians["rect"] - medians["ours"]) <= 0.2 * medians["ours"],
                f"rect {medians['rect']:.4f} m")
    ok &= check(table, "loggpis oracle worse", medians["loggpis"] > medians["ours"],
                f"loggpis {medians['loggpis']:.4f} m")
    return ok


def mapping_checks(config: RunConfig, positions, measurements, out: str, table: Table) -> bool:
    rmse = {}
    variants = {
        "two-stage": {},
        "envelope-only": {"mode": "envelope-only"},
        "loggpis": {"distance_method": "loggpis"},
    }
    for name, update in variants.items():
        run = config.model_copy(update={"mapping": config.mapping.model_copy(update=update)})
        with console.status(f"[bold green]Mapping ({name})..."):
            _, report = run_mapping(run, positions, measurements, logger=logger)
        files.write_json(os.path.join(out, f"map_{name}.json"), report)
        rmse[name] = report.interior_rmse

    ok = check(table, "mapping error", rmse["two-stage"] <= 0.01, f"RMSE {rmse['two-stage']:.4f} m")
    ok &= check(table, "envelope-only worse", rmse["envelope-only"] > rmse["two-stage"],
                f"RMSE {rmse['envelope-only']:.4f} m")
    ok &= check(table, "loggpis mapping worse", rmse["loggpis"] > rmse["two-stage"],
                f"RMSE {rmse['loggpis']:.4f} m")
    return ok


def main(seed: int, out: str) -> int:
    os.makedirs(out, exist_ok=True)
    config = RunConfig(seed=seed, filter=FilterConfig(), mapping=MapConfig(q=24))
    files.write_json(os.path.join(out, "config.json"), config)
    table = Table(title="Acceptance runs")
    for column in ("check", "result", "detail"):
        table.add_column(column)

    passed, sigma_rq = benchmark_checks(config, out, table)
    passed &= field_checks(config, sigma_rq, table)
    passed &= ugw_checks(config, table)

    with console.status("[bold green]Synthesizing plate measurements..."):
        positions, measurements = simulate_grid_measurements(PlateScene.from_config(config.plate), config.ugw, seed)
    files.save_measurements(os.path.join(out, "archive"), config, positions, measurements)
    passed &= echolocation_checks(config, positions, measurements, out, table)
    passed &= mapping_checks(config, positions, measurements, out, table)

    console.print(table)
    logger.info(f"Acceptance runs {'passed' if passed else 'failed'}; outputs in {out}")
    return 0 if passed else 1


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=int(os.getenv("REVERT_FIELD_SEED", "0")))
    parser.add_argument("--out", default=os.getenv("REVERT_FIELD_ACCEPTANCE_DIR", "acceptance"))
    args = parser.parse_args()
    sys.exit(main(args.seed, args.out))
