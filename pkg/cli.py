"""
Experiment harness: dataset synthesis, accumulation, evaluation and dataset
statistics.

    python cli.py synth --n 10 --seed 1 -o ./output/dataset
    python cli.py accumulate -d ./output/dataset --direction both --solver zero
    python cli.py eval -d ./output/dataset -r ./output/results
    python cli.py occ-stats -d ./output/dataset
"""

import csv
import functools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import click
import numpy as np
import tqdm
from click.core import ParameterSource
from loguru import logger

from accumulate import DIRECTIONS, accumulate, save_trace
from flow_core import (
    DEFAULT_MAGNITUDE_BINS,
    FlowError,
    InvalidArgumentError,
    magnitude_histogram,
)
from flow_io import load_flo
from metrics import EpeReport, epe, quantiles, write_csv, write_paired_csv
from occlusion import DETECTOR_STRATEGIES, SOLVER_STRATEGIES, OccDetector, OccSolver
from settings import (
    CONSISTENCY_TOL_ABS,
    CONSISTENCY_TOL_REL,
    DEFAULT_CANVAS,
    DEFAULT_FRAMES,
    DEFAULT_OUTPUT_ROOT,
    FULL_CANVAS,
    OUTPUT_ROOT_ENV,
)
from synthgen import (
    DIFFICULTIES,
    flow_file,
    iter_alpha_from_directory,
    list_sequences,
    load_flow_sequence,
    load_ground_truth,
    occ_file,
    read_manifest,
    synth_sequence,
    write_dataset_manifest,
)


@dataclass
class ExperimentConfig:
    """
    Everything that determines the outputs of a run. The written copy leaves out
    the output location; the worker count is a global option and never part of it.
    """

    dataset: Optional[str] = None
    results: Optional[str] = None
    output: Optional[str] = None
    n: int = 10
    seed: int = 0
    difficulty: str = "easy"
    canvas: int = DEFAULT_CANVAS
    frames: int = DEFAULT_FRAMES
    real_valued: bool = False
    linear: bool = True
    split: str = "train"
    direction: str = "both"
    detector: str = "ground-truth"
    tol_abs: float = CONSISTENCY_TOL_ABS
    tol_rel: float = CONSISTENCY_TOL_REL
    solver: str = "zero"
    keep_intermediates: bool = True
    bins: Optional[List[float]] = None

    @property
    def directions(self) -> Tuple[str, ...]:
        return DIRECTIONS if self.direction == "both" else (self.direction,)

    def make_detector(self) -> OccDetector:
        return OccDetector(self.detector, self.tol_abs, self.tol_rel)

    def make_solver(self) -> OccSolver:
        return OccSolver(self.solver)

    def to_json(self) -> Dict[str, Any]:
        d = asdict(self)
        d.pop("output")
        return d


CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


def load_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            values = json.load(f)
    except ValueError as e:
        raise click.ClickException("%s: not valid JSON (%s)" % (path, e)) from e
    if not isinstance(values, dict):
        raise click.ClickException("%s: expected a JSON object" % path)
    unknown = set(values) - CONFIG_FIELDS
    if unknown:
        raise click.ClickException(
            "%s: unknown config keys %s" % (path, ", ".join(sorted(unknown)))
        )
    return values


def resolve_config(ctx: click.Context, **flags: Any) -> ExperimentConfig:
    """
    Values from --config are used unless the same option was given on the
    command line.
    """
    values = dict(ctx.obj["config"])
    for name, value in flags.items():
        if name not in values or ctx.get_parameter_source(name) == ParameterSource.COMMANDLINE:
            values[name] = value
    return ExperimentConfig(**values)


def write_resolved_config(config: ExperimentConfig, directory: str) -> None:
    with open(os.path.join(directory, "config.json"), "w", encoding="utf-8") as f:
        json.dump(config.to_json(), f, indent=2, sort_keys=True)


def default_output(ctx: click.Context, config: ExperimentConfig, name: str) -> str:
    return config.output or os.path.join(ctx.obj["output_root"], name)


def ensure_empty_dir(path: str) -> None:
    if os.path.isdir(path) and os.listdir(path):
        raise click.ClickException("output directory %s is not empty" % path)
    if os.path.exists(path) and not os.path.isdir(path):
        raise click.ClickException("output path %s is not a directory" % path)
    os.makedirs(path, exist_ok=True)


def run_pool(
    fn: Callable[[Any], Any], jobs: Sequence[Any], workers: int, desc: str, quiet: bool
) -> List[Any]:
    """
    Maps `fn` over `jobs`; results come back in job order whatever the worker count.
    """
    if workers <= 1:
        return [fn(job) for job in tqdm.tqdm(jobs, desc=desc, disable=quiet)]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(
            tqdm.tqdm(executor.map(fn, jobs), total=len(jobs), desc=desc, disable=quiet)
        )


def handle_errors(f: Callable) -> Callable:
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (FlowError, OSError) as e:
            raise click.ClickException("%s: %s" % (type(e).__name__, e)) from e

    return wrapper


def require_dataset(config: ExperimentConfig) -> List[str]:
    if config.dataset is None:
        raise click.ClickException("no dataset given (use --dataset or the config file)")
    if not os.path.isdir(config.dataset):
        raise click.ClickException("dataset %s does not exist" % config.dataset)
    names = list_sequences(config.dataset)
    if not names:
        raise click.ClickException("dataset %s has no sequences" % config.dataset)
    return names


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--quiet", "-q", is_flag=True, help="Warnings only, no progress bars")
@click.option("--workers", "-j", type=click.IntRange(min=1), default=1, help="Worker processes")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON file of experiment settings; command-line flags take precedence",
)
@click.option(
    "--output-root",
    type=click.Path(file_okay=False),
    envvar=OUTPUT_ROOT_ENV,
    default=DEFAULT_OUTPUT_ROOT,
    show_default=True,
    help="Parent of default output directories",
)
@click.pass_context
def main(
    ctx: click.Context,
    verbose: bool,
    quiet: bool,
    workers: int,
    config_path: Optional[str],
    output_root: str,
):
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "WARNING" if quiet else "INFO")
    ctx.obj = {
        "quiet": quiet,
        "workers": workers,
        "output_root": output_root,
        "config": load_config_file(config_path) if config_path else {},
    }


@main.command()
@click.option("--output", "-o", type=click.Path(file_okay=False), default=None)
@click.option("--n", type=click.IntRange(min=1), default=10, help="Number of sequences")
@click.option("--seed", type=int, default=0)
@click.option("--difficulty", type=click.Choice(list(DIFFICULTIES)), default="easy")
@click.option(
    "--canvas",
    type=click.IntRange(min=8, max=FULL_CANVAS),
    default=DEFAULT_CANVAS,
    help="Canvas side, at most %d" % FULL_CANVAS,
)
@click.option("--frames", type=click.IntRange(min=3), default=DEFAULT_FRAMES)
@click.option("--real-valued/--integer", default=False, help="Sub-pixel displacements")
@click.option("--linear/--nonlinear", default=True, help="Constant-velocity sprites only")
@click.option("--split", type=click.Choice(["train", "val"]), default="train")
@click.pass_context
@handle_errors
def synth(ctx: click.Context, **flags):
    """Generate a synthetic dataset with exact flows and occlusion masks."""
    config = resolve_config(ctx, **flags)
    if config.difficulty not in DIFFICULTIES:
        raise click.ClickException("unknown difficulty %r" % config.difficulty)
    out = default_output(ctx, config, "dataset")
    ensure_empty_dir(out)

    job = functools.partial(
        synth_sequence,
        out,
        seed=config.seed,
        difficulty=config.difficulty,
        canvas=config.canvas,
        frames=config.frames,
        real_valued=config.real_valued,
        linear=config.linear,
    )
    entries = run_pool(job, list(range(config.n)), ctx.obj["workers"], "synth", ctx.obj["quiet"])
    write_dataset_manifest(
        out,
        entries,
        config.split,
        n=config.n,
        seed=config.seed,
        difficulty=config.difficulty,
        canvas=config.canvas,
        frames=config.frames,
        real_valued=config.real_valued,
        linear=config.linear,
    )
    write_resolved_config(config, out)
    logger.info("wrote {} sequences to {}", len(entries), out)


def required_files(
    frames: int, directions: Sequence[str], detector: OccDetector, solver: OccSolver
) -> List[str]:
    """Files of a sequence directory that an accumulation run will read."""
    n = frames
    files = [flow_file(t, t + 1) for t in range(1, n)]
    if detector.needs_backward:
        files += [flow_file(t + 1, t) for t in range(1, n)]
    for direction in directions:
        if direction == "forward":
            masks = [(1, t) for t in range(2, n)]
            targets = [(1, t + 1) for t in range(2, n)]
        else:
            masks = [(t - 1, t) for t in range(2, n)]
            targets = [(t - 1, n) for t in range(2, n)]
        if detector.needs_masks:
            files += [occ_file(*m) for m in masks]
        if solver.needs_reference:
            files += [flow_file(*p) for p in targets]
    return sorted(set(files))


def _accumulate_sequence(
    dataset: str,
    results: str,
    directions: Tuple[str, ...],
    detector: OccDetector,
    solver: OccSolver,
    keep_intermediates: bool,
    name: str,
) -> List[Dict[str, Any]]:
    seq = load_flow_sequence(os.path.join(dataset, name), name=name)
    rows = []
    for direction in directions:
        trace = accumulate(seq, direction, detector, solver, keep_intermediates)
        save_trace(trace, os.path.join(results, direction, name))
        rows.append(
            {
                "name": name,
                "direction": direction,
                "total_alpha": trace.total_alpha,
                "total_filled": trace.total_filled,
            }
        )
    return rows


@main.command(name="accumulate")
@click.option("--dataset", "-d", type=click.Path(file_okay=False), default=None)
@click.option("--output", "-o", type=click.Path(file_okay=False), default=None)
@click.option(
    "--direction", type=click.Choice(list(DIRECTIONS) + ["both"]), default="both"
)
@click.option("--detector", type=click.Choice(DETECTOR_STRATEGIES), default="ground-truth")
@click.option("--tol-abs", type=float, default=CONSISTENCY_TOL_ABS)
@click.option("--tol-rel", type=float, default=CONSISTENCY_TOL_REL)
@click.option("--solver", type=click.Choice(SOLVER_STRATEGIES), default="zero")
@click.option(
    "--keep-intermediates/--streaming",
    default=True,
    help="Write every intermediate flow and mask, or only the final flow",
)
@click.pass_context
@handle_errors
def accumulate_cmd(ctx: click.Context, **flags):
    """Accumulate the local flows of every sequence into F_1,N."""
    config = resolve_config(ctx, **flags)
    names = require_dataset(config)
    detector = config.make_detector()
    solver = config.make_solver()

    for name in names:
        seq_dir = os.path.join(config.dataset, name)
        frames = int(read_manifest(seq_dir)["frames"])
        if frames < 3:
            raise InvalidArgumentError("sequence %s has %d frames, need at least 3" % (name, frames))
        missing = [
            f
            for f in required_files(frames, config.directions, detector, solver)
            if not os.path.exists(os.path.join(seq_dir, f))
        ]
        if missing:
            raise click.ClickException(
                "sequence %s lacks inputs for detector=%s solver=%s: %s"
                % (name, detector.strategy, solver.strategy, ", ".join(missing))
            )

    out = default_output(ctx, config, "results")
    ensure_empty_dir(out)
    job = functools.partial(
        _accumulate_sequence,
        config.dataset,
        out,
        config.directions,
        detector,
        solver,
        config.keep_intermediates,
    )
    per_seq = run_pool(job, names, ctx.obj["workers"], "accumulate", ctx.obj["quiet"])

    with open(os.path.join(out, "alpha.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "direction", "total_alpha", "total_filled"])
        for rows in per_seq:
            for r in rows:
                writer.writerow(
                    [r["name"], r["direction"], "%.6f" % r["total_alpha"], r["total_filled"]]
                )
    write_resolved_config(config, out)
    logger.info("accumulated {} sequences ({}) into {}", len(names), config.direction, out)


def _result_names(results: str, direction: str) -> List[str]:
    root = os.path.join(results, direction)
    if not os.path.isdir(root):
        return []
    return sorted(
        name
        for name in os.listdir(root)
        if os.path.isfile(os.path.join(root, name, "final.flo"))
    )


def _evaluate_sequence(dataset: str, results: str, direction: str, name: str) -> EpeReport:
    gt, occ = load_ground_truth(os.path.join(dataset, name))
    estimate = load_flo(os.path.join(results, direction, name, "final.flo"))
    return epe(estimate, gt, occ, id=name)


@main.command(name="eval")
@click.option("--dataset", "-d", type=click.Path(file_okay=False), default=None)
@click.option("--results", "-r", type=click.Path(file_okay=False), default=None)
@click.option("--output", "-o", type=click.Path(file_okay=False), default=None)
@click.option(
    "--direction", type=click.Choice(list(DIRECTIONS) + ["both"]), default="both"
)
@click.pass_context
@handle_errors
def eval_cmd(ctx: click.Context, **flags):
    """EPE of accumulated flows against F_1,N on ALL, NOC and OCC regions."""
    config = resolve_config(ctx, **flags)
    names = require_dataset(config)
    if config.results is None or not os.path.isdir(config.results):
        raise click.ClickException("results directory %s does not exist" % config.results)

    directions = [d for d in config.directions if _result_names(config.results, d)]
    if not directions:
        raise click.ClickException("no accumulated flows found in %s" % config.results)
    for direction in directions:
        found = _result_names(config.results, direction)
        if set(found) != set(names):
            raise click.ClickException(
                "%s results do not match the dataset: %s"
                % (direction, ", ".join(sorted(set(found) ^ set(names))))
            )

    out = default_output(ctx, config, "eval")
    ensure_empty_dir(out)
    reports: Dict[str, List[EpeReport]] = {}
    for direction in directions:
        job = functools.partial(_evaluate_sequence, config.dataset, config.results, direction)
        reports[direction] = run_pool(
            job, names, ctx.obj["workers"], "eval %s" % direction, ctx.obj["quiet"]
        )
        total = write_csv(os.path.join(out, "epe_%s.csv" % direction), reports[direction])
        logger.info(
            "{}: EPE all={:.4f} noc={} occ={}",
            direction,
            total.epe_all,
            "-" if total.epe_noc is None else "%.4f" % total.epe_noc,
            "-" if total.epe_occ is None else "%.4f" % total.epe_occ,
        )
    if len(directions) == 2:
        write_paired_csv(os.path.join(out, "epe_paired.csv"), reports["forward"], reports["backward"])
    write_resolved_config(config, out)


def _alpha_rows(dataset: str, name: str) -> List[Tuple[str, int, float]]:
    return [(name, delta, alpha) for delta, alpha in iter_alpha_from_directory(os.path.join(dataset, name))]


@main.command(name="occ-stats")
@click.option("--dataset", "-d", type=click.Path(file_okay=False), default=None)
@click.option("--output", "-o", type=click.Path(file_okay=False), default=None)
@click.pass_context
@handle_errors
def occ_stats(ctx: click.Context, **flags):
    """Occlusion proportion of O_1,1+delta per sequence, with quartiles per delta."""
    config = resolve_config(ctx, **flags)
    names = require_dataset(config)
    out = default_output(ctx, config, "occ_stats")
    ensure_empty_dir(out)

    job = functools.partial(_alpha_rows, config.dataset)
    per_seq = run_pool(job, names, ctx.obj["workers"], "occ-stats", ctx.obj["quiet"])

    by_delta: Dict[int, List[float]] = {}
    with open(os.path.join(out, "alpha.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "delta", "alpha"])
        for rows in per_seq:
            for name, delta, alpha in rows:
                writer.writerow([name, delta, "%.6f" % alpha])
                by_delta.setdefault(delta, []).append(alpha)

    with open(os.path.join(out, "summary.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["delta", "n", "min", "q1", "median", "q3", "max"])
        for delta in sorted(by_delta):
            q = quantiles(by_delta[delta])
            writer.writerow(
                [delta, len(by_delta[delta])]
                + ["%.6f" % q[k] for k in ("min", "q1", "median", "q3", "max")]
            )
    write_resolved_config(config, out)
    logger.info("occlusion statistics for {} sequences in {}", len(names), out)


def _parse_bins(value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        return [float(x) for x in value.split(",")]
    except ValueError as e:
        raise click.BadParameter("bins must be comma-separated numbers") from e


def _long_range_histogram(dataset: str, bins: Sequence[float], name: str) -> np.ndarray:
    gt, _ = load_ground_truth(os.path.join(dataset, name))
    return magnitude_histogram(gt, bins)


@main.command(name="mag-hist")
@click.option("--dataset", "-d", type=click.Path(file_okay=False), default=None)
@click.option("--output", "-o", type=click.Path(file_okay=False), default=None)
@click.option(
    "--bins",
    default=None,
    callback=lambda ctx, param, value: _parse_bins(value),
    help="Comma-separated magnitude bin edges, e.g. 0,5,10,inf",
)
@click.pass_context
@handle_errors
def mag_hist(ctx: click.Context, **flags):
    """Magnitude histogram of the ground-truth long-range flows F_1,N."""
    config = resolve_config(ctx, **flags)
    names = require_dataset(config)
    bins = list(config.bins) if config.bins is not None else list(DEFAULT_MAGNITUDE_BINS)
    # validates the edges before anything is written
    magnitude_histogram(load_ground_truth(os.path.join(config.dataset, names[0]))[0], bins)
    out = default_output(ctx, config, "mag_hist")
    ensure_empty_dir(out)

    job = functools.partial(_long_range_histogram, config.dataset, bins)
    counts = np.sum(
        run_pool(job, names, ctx.obj["workers"], "mag-hist", ctx.obj["quiet"]), axis=0
    )
    total = int(counts.sum())
    with open(os.path.join(out, "histogram.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["lo", "hi", "count", "fraction"])
        for lo, hi, c in zip(bins[:-1], bins[1:], counts):
            writer.writerow([lo, hi, int(c), "%.6f" % (c / total)])
    write_resolved_config(config, out)


if __name__ == "__main__":
    main()
