"""Command-line front end: ``optimize``, ``simulate`` and ``landscape``.

Exit status: 0 on success, 2 for configuration or usage errors, 3 when an
objective evaluation or a simulation fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, read_config
from .dataset import NearestNeighborInterpolant
from .io import atomic_write_text, csv_text, fmt
from .objectives import EvaluationError
from .optimizer import run
from .sampling import SamplingError, SeededStream
from .smoothing import SmoothedObjective, SmoothingConfig

EXIT_OK, EXIT_CONFIG, EXIT_EVAL = 0, 2, 3
HISTOGRAM_BINS = 10

log = logging.getLogger("smoothopt")


class UsageError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration entry (repeatable)")
    common.add_argument("--objective", help="shortcut for --set objective.kind=KIND")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="parallel objective evaluations")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="smoothopt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    opt = sub.add_parser("optimize", parents=[common], help="run seeded optimizations")
    opt.add_argument("--seed", type=int)
    opt.add_argument("--runs", type=int)
    opt.add_argument("--resume", action="store_true",
                     help="continue from existing trace and dataset files")

    sim = sub.add_parser("simulate", parents=[common], help="evaluate one design")
    sim.add_argument("--design", required=True, help="design vector, e.g. '1.0 0.8'")

    land = sub.add_parser("landscape", parents=[common], help="tabulate f and smoothed f")
    land.add_argument("--axes", required=True, help="one or two axis indices, e.g. '0' or '0 1'")
    land.add_argument("--grid", type=int, default=181, help="points per axis")
    land.add_argument("--sigmas", default="", help="smoothing sigmas (physical), e.g. '0 0.1 0.2'")
    land.add_argument("--at", help="values of the remaining coordinates (default: box centre)")
    return p


def _numbers(text: str, what: str) -> np.ndarray:
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"malformed {what}: {text!r}") from exc
    if not vals or not np.all(np.isfinite(vals)):
        raise UsageError(f"malformed {what}: {text!r}")
    return np.array(vals)


def _load(args) -> RunConfig:
    overrides = list(args.set)
    if args.objective:
        overrides.append(f"objective.kind={args.objective}")
    if args.out:
        overrides.append(f"execution.out={args.out}")
    if args.workers is not None:
        overrides.append(f"execution.workers={args.workers}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"execution.seed={args.seed}")
    if getattr(args, "runs", None) is not None:
        overrides.append(f"execution.runs={args.runs}")
    if args.config and not Path(args.config).is_file():
        raise ConfigError(f"configuration file not found: {args.config}")
    return read_config(args.config, overrides)


def summary_rows(reports, seeds):
    rows = []
    for r, (seed, rep) in enumerate(zip(seeds, reports)):
        rows.append([str(r), str(seed), *rep.x_star, rep.final_objective,
                     rep.best_raw_value, *rep.best_raw_site, str(len(rep.dataset))])
    return rows


def histogram_rows(values, bins: int = HISTOGRAM_BINS):
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return [[lo, hi, str(len(values))]]
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return [[edges[i], edges[i + 1], str(int(c))] for i, c in enumerate(counts)]


def _run_job(job):
    move_limit, space, objective, seed, options, run_dir, resume = job
    log.info("seed %d -> %s", seed, run_dir)
    return run(move_limit, space, objective, SeededStream(seed), options,
               out_dir=run_dir, resume=resume)


def cmd_optimize(args) -> int:
    cfg = _load(args)
    out = cfg.out
    cfg.save(out / "config.ini")
    objective = cfg.objective.build(cfg.dim)
    seeds = [cfg.seed + r for r in range(cfg.runs)]
    jobs = [(cfg.move_limit, cfg.space, objective, seed, cfg.options,
             out / f"run_{r:03d}", args.resume) for r, seed in enumerate(seeds)]
    if cfg.runs > 1 and cfg.workers > 1:
        # independent runs fill the pool; each run then evaluates serially
        serial = dataclasses.replace(cfg.options, workers=1)
        jobs = [job[:4] + (serial,) + job[5:] for job in jobs]
        with ProcessPoolExecutor(min(cfg.workers, cfg.runs)) as pool:
            reports = list(pool.map(_run_job, jobs))
    else:
        reports = [_run_job(job) for job in jobs]
    d = cfg.dim
    header = (["run", "seed"] + [f"x_star_{i}" for i in range(d)]
              + ["final_smoothed", "best_raw"] + [f"best_raw_x_{i}" for i in range(d)]
              + ["n_evaluations"])
    atomic_write_text(out / "summary.csv", csv_text(header, summary_rows(reports, seeds)))
    finals = [rep.final_objective for rep in reports]
    atomic_write_text(out / "histogram.csv",
                      csv_text(["bin_lower", "bin_upper", "count"], histogram_rows(finals)))
    print(f"{len(reports)} run(s) written to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if cfg.objective.kind not in ("cohesive_chain", "external"):
        raise ConfigError("simulate needs objective kind cohesive_chain or external")
    design = _numbers(args.design, "design vector")
    if design.size != cfg.dim:
        raise UsageError(f"design has {design.size} entries, expected {cfg.dim}")
    objective = cfg.objective.build(cfg.dim)
    if cfg.objective.kind == "cohesive_chain":
        from .cohesive import mechanical_work
        history = objective.history(design)
        value = mechanical_work(history)
        history.save_csv(cfg.out / "load_displacement.csv")
    else:
        value = objective(design)
    print(fmt(value))
    return EXIT_OK


def landscape_table(cfg: RunConfig, axes, grid: int, sigmas, at=None, n_samples=None):
    """Grid coordinates, raw values and smoothed values per sigma.

    Smoothing perturbs only the landscape axes and integrates the
    nearest-neighbour interpolant of the grid values, so every column is
    derived from the same ``grid**len(axes)`` objective calls.
    """
    d = cfg.dim
    axes = [int(a) for a in axes]
    if not 1 <= len(axes) <= 2 or len(set(axes)) != len(axes) or not all(0 <= a < d for a in axes):
        raise UsageError(f"need one or two distinct axes in [0, {d - 1}]")
    if grid < 2:
        raise UsageError("grid must be >= 2")
    space = cfg.space
    base = 0.5 * (space.lower + space.upper) if at is None else np.asarray(at, dtype=float)
    if base.shape != (d,):
        raise UsageError(f"--at needs {d} values")
    ticks = [np.linspace(space.lower[a], space.upper[a], grid) for a in axes]
    mesh = np.meshgrid(*ticks, indexing="ij")
    coords = np.column_stack([m.ravel() for m in mesh])
    designs = np.repeat(base[None, :], len(coords), axis=0)
    designs[:, axes] = coords
    objective = cfg.objective.build(d)
    f = np.array([objective(x) for x in designs])
    columns = [f]
    if any(s > 0 for s in sigmas):
        period = np.where(space.periodic[axes], space.upper[axes] - space.lower[axes], 0.0)
        nn = NearestNeighborInterpolant(period if period.any() else None).fit(coords, f)
    for s in sigmas:
        if s == 0:
            columns.append(f.copy())
            continue
        sc = SmoothingConfig(tuple([float(s)] * len(axes)),
                             cfg.options.n_samples if n_samples is None else n_samples,
                             cfg.options.skip)
        columns.append(np.array([SmoothedObjective(nn.predict, sc, c).value(c) for c in coords]))
    header = [f"x_{a}" for a in axes] + ["f"] + [f"smoothed_sigma_{fmt(s)}" for s in sigmas]
    rows = [list(c) + [col[i] for col in columns] for i, c in enumerate(coords)]
    return header, rows


def cmd_landscape(args) -> int:
    cfg = _load(args)
    axes = [int(a) for a in _numbers(args.axes, "axes")]
    sigmas = list(_numbers(args.sigmas, "sigmas")) if args.sigmas.strip() else []
    if any(s < 0 for s in sigmas):
        raise UsageError("sigmas must be non-negative")
    at = None if args.at is None else _numbers(args.at, "--at vector")
    header, rows = landscape_table(cfg, axes, args.grid, sigmas, at)
    path = cfg.out / "landscape.csv"
    atomic_write_text(path, csv_text(header, rows))
    print(f"landscape written to {path}")
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "simulate": cmd_simulate, "landscape": cmd_landscape}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluationError, SamplingError) as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
