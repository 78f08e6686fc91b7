"""
adaprl command-line front end.

Runs one training job, an experiment sweep, or prediction with uncertainty
from a saved checkpoint. Every output of a run goes to a fresh
run-stamped directory below the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections.abc import Sequence
from datetime import UTC, datetime
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import SEED_ENV, RunConfig, load_run_config
from .data import Column, ColumnKind, Dataset, Schema, apply_bins, load_csv
from .errors import AdaprlError, ConfigError, DataError, NumericalError
from .experiment import model_config, prepare_splits, train_and_evaluate
from .metrics import uncertainty_error_bins
from .sweep import AGGREGATE_COLUMNS, DETAIL_COLUMNS, run_sweep, write_table
from .train import Evaluation, TrainLog, predict_all

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
EXIT_INTERRUPTED = 130

UNCERTAINTY_BINS = 10


def exit_code_for(exc: AdaprlError) -> int:
    match exc:
        case ConfigError():
            return EXIT_CONFIG
        case NumericalError():
            return EXIT_NUMERICAL
        case _:
            return EXIT_DATA


# =============================================================================
# Output helpers
# =============================================================================


def run_directory(out: Path, command: str, config_path: Path | None) -> Path:
    """Create ``<out>/<command>-<stem>-<UTC stamp>``; a numeric suffix avoids collisions."""
    stamp = datetime.now(UTC).strftime("%Y%m%dT%H%M%SZ")
    stem = f"{command}-{config_path.stem}" if config_path is not None else command
    candidate = out / f"{stem}-{stamp}"
    suffix = 1
    while candidate.exists():
        suffix += 1
        candidate = out / f"{stem}-{stamp}-{suffix}"
    candidate.mkdir(parents=True)
    return candidate


def write_json(path: Path, payload: object) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(value: float) -> str:
    return repr(float(value))


def write_test_predictions(path: Path, target_names: Sequence[str], targets: np.ndarray, ev: Evaluation) -> None:
    header = ["row_index"]
    for name in target_names:
        header += [f"{name}_true", f"{name}_pred", f"{name}_mu", f"{name}_sigma", f"{name}_abs_error"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(targets.shape[0]):
            row = [str(i)]
            for k in range(len(target_names)):
                y, p = targets[i, k], ev.predictions[i, k]
                row += [_fmt(y), _fmt(p), _fmt(ev.mu[i, k]), _fmt(ev.sigma[i, k]), _fmt(abs(p - y))]
            writer.writerow(row)


def write_uncertainty_bins(path: Path, targets: np.ndarray, ev: Evaluation) -> None:
    bins = min(UNCERTAINTY_BINS, targets.size)
    rows = uncertainty_error_bins(ev.sigma, np.abs(ev.predictions - targets), bins=bins)
    write_table(path, list(rows[0]), rows)


def print_report(title: str, reports: dict[str, dict]) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)
    for split, metrics in reports.items():
        print(f"[{split}]")
        for name, value in metrics.items():
            shown = "-" if value is None else f"{value:.6g}"
            print(f"  {name:<22} {shown}")
    print("=" * 60)


# =============================================================================
# Commands
# =============================================================================


def cmd_train(config: RunConfig, out: Path, jobs: int = 1) -> int:
    splits = prepare_splits(config)
    run_dir = run_directory(out, "train", config.source)
    logger.info("run directory: %s", run_dir)

    with TrainLog(run_dir / "train_log.jsonl") as log:
        result = train_and_evaluate(config, splits, log=log, jobs=jobs)

    train_ds = splits.train
    save_checkpoint(
        run_dir / "checkpoint.bin",
        result.state.pair,
        extras={
            "schema": train_ds.schema.to_json(),
            "vocabularies": {name: list(labels) for name, labels in train_ds.vocabularies.items()},
            "bin_edges": {name: list(cuts) for name, cuts in splits.bin_edges.items()},
        },
    )
    reports = {"valid": result.valid.report.to_json(), "test": result.test.report.to_json()}
    write_json(run_dir / "report.json", reports)
    targets = splits.test.target_matrix()
    target_names = model_config(config, train_ds).target_names
    write_test_predictions(run_dir / "test_predictions.csv", target_names, targets, result.test)
    write_uncertainty_bins(run_dir / "uncertainty_bins.csv", targets, result.test)

    print_report(f"adaprl train: {run_dir}", reports)
    print(f"best epoch {result.state.best_epoch}, {result.state.step} steps")
    return EXIT_OK


def cmd_sweep(config: RunConfig, out: Path, jobs: int = 1, repeats: int | None = None) -> int:
    run_dir = run_directory(out, "sweep", config.source)
    logger.info("run directory: %s", run_dir)
    result = run_sweep(config, run_dir, jobs=jobs, repeats=repeats)
    write_table(run_dir / "sweep_detail.csv", DETAIL_COLUMNS, result.detail)
    write_table(run_dir / "sweep_aggregate.csv", AGGREGATE_COLUMNS, result.aggregate)

    print("=" * 60)
    print(f"adaprl sweep: {run_dir}")
    print("=" * 60)
    for row in result.aggregate:
        improvement = row["improvement"]
        shown = "-" if improvement is None else f"{improvement:+.3%}"
        print(f"  {row['kind']}={row['value']!s:<8} runs={row['runs']}  improvement {shown}")
    for failure in result.failures:
        print(f"Error: {failure}", file=sys.stderr)
    return result.exit_code


def _inference_dataset(path: Path, extras: dict) -> Dataset:
    """Load *path* using the trained schema; targets and weights are optional.

    Columns binned at training time arrive raw and are re-binned with the
    stored edges.
    """
    schema = Schema.from_json(extras.get("schema", []), require_target=False)
    bin_edges: dict[str, list[float]] = extras.get("bin_edges", {})
    with path.open(newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    by_name = {c.name: c for c in schema.columns}
    unknown = [name for name in header if name not in by_name]
    if unknown:
        raise DataError(f"input column(s) {unknown} are not part of the trained schema {list(schema.all_names)}")
    missing = [name for name in schema.features_only().all_names if name not in header]
    if missing:
        raise DataError(f"input is missing feature column(s) {missing}")

    raw = tuple(Column(h, ColumnKind.NUMERIC) if h in bin_edges else by_name[h] for h in header)
    vocabularies = {k: v for k, v in extras.get("vocabularies", {}).items() if k not in bin_edges}
    ds = load_csv(path, Schema(raw, require_target=False), vocabularies)
    for column, cuts in bin_edges.items():
        ds = apply_bins(ds, column, cuts)
    # Batches follow schema order, which must be the trained order.
    trained_order = Schema(tuple(c for c in schema.columns if c.name in header), require_target=False)
    return Dataset(trained_order, ds.columns, ds.vocabularies)


def cmd_predict(checkpoint: Path, csv_in: Path, csv_out: Path, jobs: int = 1) -> int:
    pair, extras = load_checkpoint(checkpoint)
    if not csv_in.is_file():
        raise DataError(f"file not found: {csv_in}")
    ds = _inference_dataset(csv_in, extras)
    pred, mu, sigma = predict_all(pair, ds, jobs=jobs)

    header = ["row_index"]
    for name in pair.config.target_names:
        header += [f"{name}_pred", f"{name}_mu", f"{name}_sigma", f"{name}_lower", f"{name}_upper"]
    with csv_out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n_rows):
            row = [str(i)]
            for k in range(len(pair.config.target_names)):
                row += [
                    _fmt(pred[i, k]),
                    _fmt(mu[i, k]),
                    _fmt(sigma[i, k]),
                    _fmt(mu[i, k] - sigma[i, k]),
                    _fmt(mu[i, k] + sigma[i, k]),
                ]
            writer.writerow(row)
    print(f"wrote {ds.n_rows} predictions to {csv_out}")
    return EXIT_OK


# =============================================================================
# Entry point
# =============================================================================


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="adaprl",
        description="Train and evaluate uncertainty-aware pairwise ranking regressors",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Examples:
  # Train once and write checkpoint, log and reports under runs/
  adaprl train configs/synthetic.json

  # Noise-robustness sweep, 5 seeds per level, 4 worker processes
  adaprl sweep configs/noise.json --jobs 4

  # Export predictions with one-sigma intervals
  adaprl predict runs/train-synthetic-*/checkpoint.bin data.csv out.csv

Environment:
  {SEED_ENV}   overrides train.seed of the config file
""",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train once and evaluate on valid/test")
    train.add_argument("config", type=Path, help="JSON run configuration")
    train.add_argument("--out", type=Path, default=None, help="Output directory (default: config output_dir)")
    train.add_argument("--jobs", type=int, default=1, help="Threads for chunked evaluation (default: 1)")

    sweep = sub.add_parser("sweep", help="Run the experiment grid of the config")
    sweep.add_argument("config", type=Path, help="JSON run configuration with a 'sweep' section")
    sweep.add_argument("--out", type=Path, default=None, help="Output directory (default: config output_dir)")
    sweep.add_argument("--jobs", type=int, default=1, help="Parallel runs (default: 1)")
    sweep.add_argument("--repeats", type=int, default=None, help="Override sweep.repeats")

    predict = sub.add_parser("predict", help="Predict with uncertainty from a checkpoint")
    predict.add_argument("checkpoint", type=Path)
    predict.add_argument("csv_in", type=Path)
    predict.add_argument("csv_out", type=Path)
    predict.add_argument("--jobs", type=int, default=1, help="Threads for chunked prediction (default: 1)")

    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if getattr(args, "repeats", None) is not None and args.repeats < 1:
        parser.error("--repeats must be >= 1")
    return args


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        if args.command == "predict":
            return cmd_predict(args.checkpoint, args.csv_in, args.csv_out, jobs=args.jobs)
        config = load_run_config(args.config, os.environ)
        out = args.out if args.out is not None else config.output_dir
        if args.command == "train":
            return cmd_train(config, out, jobs=args.jobs)
        return cmd_sweep(config, out, jobs=args.jobs, repeats=args.repeats)
    except AdaprlError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
