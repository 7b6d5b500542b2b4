# spectralab/cli.py
"""Command-line front end.

Every experiment subcommand loads a JSON config (optional), applies
``--set`` overrides, validates, then runs through one checkpointed
:class:`~spectralab.parallel.SampleRunner` that writes into the output
directory next to ``manifest.json``.
"""
from __future__ import annotations

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import functools
import importlib.metadata
import json
import logging
import sys
from dataclasses import dataclass, field
from typing import Callable

from . import config
from .disorder import SeedPolicy
from .eigen import write_eigenvalues_csv
from .errors import (CheckpointMismatchError, ConfigurationError, RunInterrupted, SolverError,
                     SpectraError)
from .experiments import (ExperimentResult, certify_energies, run_decorrelation, run_gradient_separation,
                          run_heavytail_variant, run_independence, run_laplace_check, run_level_statistics,
                          run_minami_sweep, run_perturbation_check, run_wegner_sweep, sample_field_record)
from .export import (append_results_jsonl, count_pmf_figure, decorrelation_figure, dos_figure, save_figure,
                     write_counts_csv, write_determinants_csv, write_dos_csv, write_fit_csv,
                     write_perturbation_csv, write_rows, write_summary_csv)
from .hamiltonian import WeightField
from .parallel import SampleRunner, resolve_workers
from .perturb import check_determinants
from .runconfig import EXPERIMENT_NAMES, MANIFEST_FILENAME, ExperimentConfig, RunManifest, load_config, utc_now
from .stats import estimate_dos
from .storage import CheckpointStore

logger = logging.getLogger(__name__)


def _resolve_version() -> str:
    """Version from the root ``version`` module, else the installed metadata, else ``unknown``."""
    try:
        from version import __version__ as found
        return found
    except ImportError:
        pass
    try:
        return importlib.metadata.version("spectralab")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


__version__ = _resolve_version()

RESULTS_FILENAME = "results.jsonl"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INTERRUPTED = 3


@dataclass
class RunContext:
    out_dir: str
    runner: SampleRunner
    plot: bool = False
    files: list[str] = field(default_factory=list)

    def path(self, name: str) -> str:
        p = os.path.join(self.out_dir, name)
        self.files.append(name)
        return p


Handler = Callable[[ExperimentConfig, RunContext], list[ExperimentResult]]


def _seeds(cfg: ExperimentConfig) -> SeedPolicy:
    return SeedPolicy(cfg.master_seed)


def _windows(cfg: ExperimentConfig, count: int = 1) -> list[list[float]]:
    return cfg.windows or [[-1.0, 1.0]] * count


def _gate(cfg: ExperimentConfig, ctx: RunContext, energies: list[float]) -> None:
    """Empirical localization certificate for in-band energies, unless disabled."""
    if cfg.localization_gate is None:
        return
    in_band = [e for e in energies if 0.0 < e < 4.0 * cfg.disorder.beta0]
    if not in_band:
        return
    certify_energies(cfg.disorder, in_band, cfg.n_sites, _seeds(cfg),
                     n_samples=int(cfg.param("gate_samples", 20)),
                     radius=float(cfg.param("gate_radius", 0.05)),
                     threshold=cfg.localization_gate, mapper=ctx.runner.map)


# ---- handlers ---------------------------------------------------------------------

def _sample_spectrum(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    seeds = _seeds(cfg)
    task = functools.partial(sample_field_record, cfg.disorder, cfg.n_sites, seeds)
    records = ctx.runner.map("sample_spectrum", task, cfg.n_samples)
    for r in records:
        i = r["index"]
        WeightField(r["weights"]).to_csv(ctx.path(f"weights_{i}.csv"))
        write_eigenvalues_csv(ctx.path(f"eigenvalues_{i}.csv"), r["eigenvalues"])
    worst_residual = max(r["max_residual"] for r in records)
    worst_ortho = max(r["orthonormality"] for r in records)
    tol = config.EIGEN_TOLERANCES["residual"]
    return [ExperimentResult(
        name="sample_spectrum",
        parameters={"spec": cfg.disorder.to_dict(), "master_seed": cfg.master_seed, "n_samples": cfg.n_samples,
                    "n_sites": cfg.n_sites},
        estimate=worst_residual,
        interval=None,
        reference_bound=tol,
        verdict=worst_residual <= tol * max(r["matrix_norm"] for r in records) + tol,
        details={"max_orthonormality_error": worst_ortho,
                 "max_ground_energy": max(r["eigenvalues"][0] for r in records),
                 "max_top_energy": max(r["eigenvalues"][-1] for r in records)},
    )]


def _dos(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    dos = estimate_dos(cfg.disorder, cfg.n_sites, cfg.n_samples, _seeds(cfg), cfg.param("bandwidth"),
                       mapper=ctx.runner.map)
    write_dos_csv(ctx.path("dos.csv"), dos)
    if ctx.plot:
        save_figure(dos_figure(dos), ctx.path("dos.html"))
    top = dos.n_at(4.0 * cfg.disorder.beta0)
    return [ExperimentResult(
        name="dos",
        parameters={"spec": cfg.disorder.to_dict(), "master_seed": cfg.master_seed, "n_samples": cfg.n_samples,
                    "n_sites": cfg.n_sites},
        estimate=top,
        interval=None,
        reference_bound=1.0,
        verdict=abs(top - 1.0) <= 1e-12,
        details={"bandwidth": dos.bandwidth, "nu": {str(e): dos.nu_at(e) for e in cfg.energies}},
    )]


def _levelstats(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    energy = cfg.energies[0]
    _gate(cfg, ctx, [energy])
    out = run_level_statistics(
        cfg.disorder, energy, _windows(cfg), cfg.n_sites, cfg.n_samples, _seeds(cfg),
        calibration_samples=int(cfg.param("calibration_samples", 500)),
        bandwidth=cfg.param("bandwidth"),
        targets=cfg.param("targets"),
        tv_tolerance=float(cfg.param("tv_tolerance", 0.1)),
        min_samples=int(cfg.param("min_samples", 1000)),
        mapper=ctx.runner.map,
        allow_low_energy=cfg.allow_low_energy,
    )
    write_dos_csv(ctx.path("dos.csv"), out.dos)
    write_counts_csv(ctx.path("counts.csv"), out.counts)
    write_fit_csv(ctx.path("fit.csv"), out.fit)
    if ctx.plot:
        save_figure(dos_figure(out.dos), ctx.path("dos.html"))
        save_figure(count_pmf_figure(out.fit), ctx.path("counts.html"))
    return [out.result]


def _wegner(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    epsilons = cfg.param("epsilons") or [cfg.param("epsilon", 1e-3)]
    return run_wegner_sweep(cfg.disorder, cfg.energies[0], [float(e) for e in epsilons], cfg.n_sites,
                            cfg.n_samples, _seeds(cfg), mapper=ctx.runner.map,
                            allow_low_energy=cfg.allow_low_energy)


def _minami(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    intervals = [(float(a), float(b)) for a, b in cfg.param("intervals")]
    return run_minami_sweep(cfg.disorder, intervals, cfg.n_sites, cfg.n_samples, _seeds(cfg),
                            mapper=ctx.runner.map, allow_low_energy=cfg.allow_low_energy)


def _decorrelate(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    energy, energy_prime = cfg.energies[0], cfg.energies[1]
    _gate(cfg, ctx, [energy, energy_prime])
    results = run_decorrelation(
        cfg.disorder, energy, energy_prime, [int(x) for x in cfg.param("L_list")],
        float(cfg.param("alpha", 0.5)), float(cfg.param("beta", 0.75)), cfg.n_samples, _seeds(cfg),
        c=float(cfg.param("c", 1.0)), min_slope=float(cfg.param("min_slope", 1.7)),
        mapper=ctx.runner.map, allow_low_energy=cfg.allow_low_energy,
    )
    if ctx.plot:
        save_figure(decorrelation_figure(results), ctx.path("decorrelation.html"))
    return results


def _independence(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    _gate(cfg, ctx, cfg.energies)
    result = run_independence(
        cfg.disorder, cfg.energies, _windows(cfg, len(cfg.energies)), cfg.n_sites, cfg.n_samples, _seeds(cfg),
        calibration_samples=int(cfg.param("calibration_samples", 500)),
        targets=cfg.param("targets"),
        events=cfg.param("events"),
        box_half_width=cfg.param("box_half_width"),
        laplace_a=cfg.param("laplace_a", (1.0, 1.0, 1.0)),
        tolerance=float(cfg.param("tolerance", 0.03)),
        max_correlation=float(cfg.param("max_correlation", 0.07)),
        mapper=ctx.runner.map,
        allow_low_energy=cfg.allow_low_energy,
    )
    write_rows(ctx.path("events.csv"), ("event", "joint", "product", "poisson", "discrepancy"),
               ((" ".join(map(str, r["event"])), r["joint"], r["product"], r["poisson"], r["discrepancy"])
                for r in result.details["events"]))
    return [result]


def _heavytail(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    return [run_heavytail_variant(
        cfg.disorder, int(cfg.param("L", 512)), float(cfg.param("delta", 0.5)), float(cfg.param("beta", 0.75)),
        float(cfg.param("epsilon", 0.1)), cfg.n_samples, _seeds(cfg),
        verify_samples=int(cfg.param("verify_samples", 50)),
        required_rate=float(cfg.param("required_rate", 0.99)),
        mapper=ctx.runner.map,
    )]


def _check_perturbation(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    rows, result = run_perturbation_check(
        cfg.disorder, cfg.sizes, cfg.n_samples, _seeds(cfg),
        pairs_per_sample=int(cfg.param("pairs_per_sample", 1)),
        min_gap=float(cfg.param("min_gap", 0.05)),
        step=float(cfg.param("step", 1e-5)),
        step2=float(cfg.param("step2", 2e-4)),
        hessian_entries=int(cfg.param("hessian_entries", 12)),
        mapper=ctx.runner.map,
    )
    write_perturbation_csv(ctx.path("perturbation.csv"), rows)
    return [result]


def _check_determinants(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    draws = int(cfg.param("draws", cfg.n_samples))
    tolerance = float(cfg.param("tolerance", 1e-9))
    zero_tolerance = float(cfg.param("zero_tolerance", 1e-10))
    checks = check_determinants(draws, _seeds(cfg))
    write_determinants_csv(ctx.path("determinants.csv"), checks)
    return [ExperimentResult(
        name=f"determinants_{c.case.value}",
        parameters={"master_seed": cfg.master_seed, "draws": draws},
        estimate=c.max_rel_err,
        interval=None,
        reference_bound=tolerance,
        verdict=c.max_rel_err <= tolerance and c.max_zero_factor <= zero_tolerance,
        details={"max_zero_factor": c.max_zero_factor},
    ) for c in checks]


def _laplace_check(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    return [run_laplace_check(cfg.n_samples, _seeds(cfg), tolerance=float(cfg.param("tolerance", 1e-12)))]


def _gradient_separation(cfg: ExperimentConfig, ctx: RunContext) -> list[ExperimentResult]:
    radius = cfg.param("radius")
    return [run_gradient_separation(cfg.disorder, cfg.energies[0], cfg.energies[1], cfg.n_sites,
                                    cfg.n_samples, _seeds(cfg),
                                    radius=float(radius) if radius is not None else None,
                                    mapper=ctx.runner.map)]


HANDLERS: dict[str, Handler] = {
    "sample-spectrum": _sample_spectrum,
    "dos": _dos,
    "levelstats": _levelstats,
    "wegner": _wegner,
    "minami": _minami,
    "decorrelate": _decorrelate,
    "independence": _independence,
    "heavytail": _heavytail,
    "check-perturbation": _check_perturbation,
    "check-determinants": _check_determinants,
    "laplace-check": _laplace_check,
    "gradient-separation": _gradient_separation,
}


# ---- run / resume ---------------------------------------------------------------------

def summary_filename(experiment: str) -> str:
    return f"{experiment.replace('-', '_')}_summary.csv"


def execute(cfg: ExperimentConfig, *, out_dir: str, config_path: str | None = None,
            overrides: list[str] | None = None, workers: int | None = None, plot: bool = False,
            stop_after_chunks: int | None = None) -> list[ExperimentResult]:
    """Run one validated config into ``out_dir`` with checkpointing."""
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, MANIFEST_FILENAME)
    config_hash = cfg.hash()

    if os.path.exists(manifest_path):
        manifest = RunManifest.load(manifest_path)
        if manifest.config_hash != config_hash:
            raise CheckpointMismatchError(
                f"{out_dir} holds a run of a different config (hash {manifest.config_hash[:12]}, "
                f"now {config_hash[:12]}); use another --out"
            )
        manifest.status = "running"
        manifest.finished_at = None
    else:
        manifest = RunManifest(cfg.experiment, config_hash, __version__, config_path=config_path,
                               overrides=list(overrides or []))

    with CheckpointStore.in_directory(out_dir) as store:
        stored_hash = store.get_meta("config_hash")
        if stored_hash is not None and stored_hash != config_hash:
            raise CheckpointMismatchError(f"checkpoint in {out_dir} belongs to config {stored_hash[:12]}")
        store.set_meta("config_hash", config_hash)
        store.set_meta("code_version", __version__)
        manifest.save(manifest_path)

        n_workers = resolve_workers(workers, cfg.workers)
        runner = SampleRunner(n_workers, cfg.checkpoint_interval, store, stop_after_chunks)
        ctx = RunContext(out_dir, runner, plot)
        logger.info("running %s into %s (workers=%d, hash=%s)", cfg.experiment, out_dir, n_workers,
                    config_hash[:12])
        try:
            results = HANDLERS[cfg.experiment](cfg, ctx)
        except RunInterrupted:
            manifest.chunks = store.completed_offsets()
            manifest.status = "interrupted"
            manifest.save(manifest_path)
            raise
        manifest.chunks = store.completed_offsets()

    append_results_jsonl(os.path.join(out_dir, RESULTS_FILENAME), results)
    write_summary_csv(os.path.join(out_dir, summary_filename(cfg.experiment)), results)
    manifest.status = "complete"
    manifest.finished_at = utc_now()
    manifest.save(manifest_path)
    logger.info("%s done: %d result(s), chunks computed=%d reused=%d", cfg.experiment, len(results),
                runner.computed_chunks, runner.reused_chunks)
    for r in results:
        logger.info("  %s estimate=%s bound=%s verdict=%s", r.name, r.estimate, r.reference_bound, r.verdict)
    return results


def resume(manifest_path: str, *, workers: int | None = None, plot: bool = False,
           stop_after_chunks: int | None = None) -> list[ExperimentResult] | None:
    """Finish an interrupted run; ``None`` when it was already complete."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_FILENAME)
    manifest = RunManifest.load(manifest_path)
    cfg = load_config(manifest.config_path, manifest.overrides)
    if cfg.hash() != manifest.config_hash:
        raise CheckpointMismatchError(
            f"config changed since the run started (hash {cfg.hash()[:12]} != {manifest.config_hash[:12]}); "
            "refusing stale checkpoint"
        )
    if manifest.status == "complete":
        logger.info("run in %s is already complete; nothing to do", os.path.dirname(manifest_path))
        return None
    return execute(cfg, out_dir=os.path.dirname(os.path.abspath(manifest_path)),
                   config_path=manifest.config_path, overrides=manifest.overrides, workers=workers, plot=plot,
                   stop_after_chunks=stop_after_chunks)


# ---- argument parsing -------------------------------------------------------------------

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, help="worker processes (default: SPECTRA_WORKERS or CPU count)")
    common.add_argument("--out", help=f"output directory (default: {config.OUT_DIR})")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a dotted config path; repeatable")
    common.add_argument("--plot", action="store_true", help="write Plotly figures")
    common.add_argument("--stop-after-chunks", type=int, help="stop after N computed chunks (resume later)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectralab", description="Off-diagonal disorder numerical lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()
    sub.add_parser("run", parents=[common], help="run the experiment named in the config")
    for name in EXPERIMENT_NAMES:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    p = sub.add_parser("resume", help="finish an interrupted run")
    p.add_argument("manifest", help="manifest.json or the output directory holding it")
    p.add_argument("--workers", type=int)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--stop-after-chunks", type=int)
    return parser


def _overrides(args: argparse.Namespace) -> list[str]:
    overrides = []
    if args.command != "run":
        overrides.append(f"experiment={json.dumps(args.command)}")
    overrides.extend(args.set)
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    if args.out:
        overrides.append(f"output_dir={json.dumps(args.out)}")
    return overrides


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "resume":
        resume(args.manifest, workers=args.workers, plot=args.plot, stop_after_chunks=args.stop_after_chunks)
        return EXIT_OK
    overrides = _overrides(args)
    config_path = os.path.abspath(args.config) if args.config else None
    cfg = load_config(config_path, overrides)
    execute(cfg, out_dir=cfg.output_dir, config_path=config_path, overrides=overrides, workers=args.workers,
            plot=args.plot, stop_after_chunks=args.stop_after_chunks)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(message)s",
        stream=sys.stdout,
        force=True,
    )
    logging.info("spectralab starting - version %s", __version__)
    logging.info("Python executable: %s", sys.executable)
    logging.info("Working directory: %s", os.getcwd())

    try:
        return _dispatch(args)
    except (ConfigurationError, CheckpointMismatchError) as exc:
        logging.error("%s", exc)
        return EXIT_CONFIG
    except RunInterrupted as exc:
        logging.warning("%s", exc)
        return EXIT_INTERRUPTED
    except SolverError as exc:
        logging.error("solver failure: %s", exc)
        return EXIT_FAILURE
    except SpectraError as exc:
        logging.error("%s", exc)
        return EXIT_FAILURE
    except ValueError as exc:
        logging.error("invalid experiment arguments: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logging.error("I/O failure: %s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
