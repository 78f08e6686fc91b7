"""
Experiment grids: every grid point runs ``repeats`` seeds for the AdaPRL arm
and for the matched alpha = 0 baseline arm.

Runs are keyed by their effective settings so a baseline shared by several
grid points (alpha and sparsity sweeps) is trained once per seed. Each run
writes its own JSON file under ``points/``; the tables are assembled from
those files, so serial and parallel execution give identical output.

With ``alphas`` set, the AdaPRL arm of a data sweep trains every candidate
alpha and each row reports the candidate with the lowest validation MSE.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .config import RunConfig, SweepKind, SweepSpec
from .data import CorruptionSpec, NoiseSpec, corrupt_columns, inject_label_noise, subsample
from .errors import AdaprlError, ConfigError, DomainError, NumericalError
from .experiment import prepare_splits, train_and_evaluate
from .metrics import relative_improvement

logger = logging.getLogger(__name__)

ADAPRL_ARM = "adaprl"
BASELINE_ARM = "baseline"
METRIC_COLUMNS = ("mse", "mae", "kendall_tau", "weighted_r2", "spearman_sigma_error")
DETAIL_COLUMNS = ("kind", "value", "seed", "arm", "alpha", "status", *METRIC_COLUMNS, "improvement")
AGGREGATE_COLUMNS = (
    "kind",
    "value",
    "runs",
    "adaprl_mse",
    "baseline_mse",
    "adaprl_mae",
    "baseline_mae",
    "adaprl_kendall_tau",
    "baseline_kendall_tau",
    "improvement",
)
_DATA_KINDS = (SweepKind.NOISE, SweepKind.CORRUPTION, SweepKind.FRACTION)


@dataclass(frozen=True, order=True)
class RunKey:
    """Effective settings of one training run."""

    perturbation: str
    level: float
    repeat: int
    alpha: float
    keep_fraction: float

    @property
    def slug(self) -> str:
        return f"{self.perturbation}-{self.level!r}-r{self.repeat}-a{self.alpha!r}-p{self.keep_fraction!r}"


@dataclass(frozen=True)
class Cell:
    """One detail row: a (grid value, repeat, arm) triple and the run it reads.

    A cell with alternatives reads whichever of its runs scored the lowest
    validation MSE.
    """

    value: float
    repeat: int
    arm: str
    key: RunKey
    alternatives: tuple[RunKey, ...] = ()

    @property
    def runs(self) -> tuple[RunKey, ...]:
        return (self.key, *self.alternatives)


@dataclass
class SweepResult:
    detail: list[dict[str, object]]
    aggregate: list[dict[str, object]]
    failures: list[str]
    numerical_failure: bool

    @property
    def exit_code(self) -> int:
        if not self.failures:
            return 0
        return 3 if self.numerical_failure else 2


def plan(config: RunConfig, spec: SweepSpec) -> list[Cell]:
    """Detail cells in output order: value, then repeat, then arm."""
    base = config.train.loss
    if spec.kind is not SweepKind.ALPHA and base.alpha == 0.0 and not spec.alphas:
        raise ConfigError(f"a {spec.kind} sweep needs train.alpha > 0 for its AdaPRL arm", key="train.alpha")
    cells = []
    for value in spec.values:
        perturbation, level = (str(spec.kind), float(value)) if spec.kind in _DATA_KINDS else ("none", 0.0)
        for repeat in range(spec.repeats):
            match spec.kind:
                case SweepKind.ALPHA:
                    alpha, keep = float(value), base.keep_fraction
                case SweepKind.SPARSITY:
                    alpha, keep = base.alpha, float(value)
                case _:
                    alpha, keep = base.alpha, base.keep_fraction
            candidates = [RunKey(perturbation, level, repeat, a, keep) for a in (spec.alphas or (alpha,))]
            cells.append(Cell(value, repeat, ADAPRL_ARM, candidates[0], tuple(candidates[1:])))
            cells.append(Cell(value, repeat, BASELINE_ARM, RunKey(perturbation, level, repeat, 0.0, 1.0)))
    return cells


def run_point(config: RunConfig, spec: SweepSpec, key: RunKey) -> dict[str, object]:
    """Train and evaluate one run; failures are returned, not raised."""
    seed = config.split.seed + key.repeat
    try:
        splits = prepare_splits(config, key.repeat)
        test = None
        match key.perturbation:
            case SweepKind.NOISE:
                splits = replace(splits, train=inject_label_noise(splits.train, NoiseSpec(int(key.level), seed)))
            case SweepKind.FRACTION:
                splits = replace(splits, train=subsample(splits.train, key.level, seed))
            case SweepKind.CORRUPTION:
                # Early stopping keeps the clean validation split; only the test split is scored corrupted.
                corruption = CorruptionSpec(int(key.level), spec.column_fraction, seed)
                _, test = corrupt_columns(splits.valid, splits.test, corruption)
        loss = replace(config.train.loss, alpha=key.alpha, keep_fraction=key.keep_fraction)
        train_config = replace(config.train, loss=loss, seed=config.train.seed + key.repeat)
        result = train_and_evaluate(config, splits, train_config=train_config, test=test)
    except NumericalError as exc:
        return {"status": f"failed: {exc}", "numerical": True}
    except AdaprlError as exc:
        return {"status": f"failed: {exc}", "numerical": False}
    return {"status": "ok", **result.test.report.to_json(), "valid_mse": result.valid.report.mse}


def _point_path(points_dir: Path, key: RunKey) -> Path:
    return points_dir / f"{key.slug}.json"


def _run_and_store(config: RunConfig, spec: SweepSpec, key: RunKey, points_dir: Path) -> None:
    outcome = run_point(config, spec, key)
    _point_path(points_dir, key).write_text(json.dumps(outcome, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("%s: %s", key.slug, outcome["status"])


def run_sweep(config: RunConfig, out_dir: Path, jobs: int = 1, repeats: int | None = None) -> SweepResult:
    if config.sweep is None:
        raise ConfigError("config has no 'sweep' section", key="sweep")
    spec = config.sweep if repeats is None else replace(config.sweep, repeats=repeats)
    cells = plan(config, spec)
    keys = sorted({key for cell in cells for key in cell.runs})
    points_dir = out_dir / "points"
    points_dir.mkdir(parents=True, exist_ok=True)
    logger.info(
        "%s sweep: %d grid values x %d repeats, %d distinct runs", spec.kind, len(spec.values), spec.repeats, len(keys)
    )

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for future in [pool.submit(_run_and_store, config, spec, key, points_dir) for key in keys]:
                future.result()
    else:
        for key in keys:
            _run_and_store(config, spec, key, points_dir)

    outcomes = {key: json.loads(_point_path(points_dir, key).read_text(encoding="utf-8")) for key in keys}
    return assemble(spec, cells, outcomes)


def assemble(spec: SweepSpec, cells: Sequence[Cell], outcomes: dict[RunKey, dict[str, object]]) -> SweepResult:
    """Detail and aggregate tables from per-run outcomes."""
    baseline_mse = {
        (cell.value, cell.repeat): outcomes[cell.key].get("mse") for cell in cells if cell.arm == BASELINE_ARM
    }
    detail: list[dict[str, object]] = []
    failures: list[str] = []
    numerical = False
    for cell in cells:
        key = _selected(cell, outcomes)
        outcome = outcomes[key]
        row: dict[str, object] = {
            "kind": str(spec.kind),
            "value": cell.value,
            "seed": cell.repeat,
            "arm": cell.arm,
            "alpha": key.alpha,
            "status": outcome["status"],
        }
        row.update({name: outcome.get(name) for name in METRIC_COLUMNS})
        row["improvement"] = _improvement(baseline_mse[(cell.value, cell.repeat)], outcome.get("mse"))
        for run in cell.runs:
            if (status := outcomes[run]["status"]) != "ok":
                failures.append(f"{run.slug}: {status}")
                numerical = numerical or bool(outcomes[run].get("numerical"))
        detail.append(row)

    aggregate = []
    for value in spec.values:
        rows = [r for r in detail if r["value"] == value and r["status"] == "ok"]
        arm_rows = {arm: [r for r in rows if r["arm"] == arm] for arm in (ADAPRL_ARM, BASELINE_ARM)}
        aggregate.append(
            {
                "kind": str(spec.kind),
                "value": value,
                "runs": len(arm_rows[ADAPRL_ARM]),
                **{
                    f"{arm}_{metric}": _mean(r[metric] for r in arm_rows[arm])
                    for metric in ("mse", "mae", "kendall_tau")
                    for arm in (ADAPRL_ARM, BASELINE_ARM)
                },
                "improvement": _mean(r["improvement"] for r in arm_rows[ADAPRL_ARM]),
            }
        )
    return SweepResult(detail=detail, aggregate=aggregate, failures=sorted(set(failures)), numerical_failure=numerical)


def _selected(cell: Cell, outcomes: dict[RunKey, dict[str, object]]) -> RunKey:
    scored = [
        (float(outcomes[run]["valid_mse"]), run)  # type: ignore[arg-type]
        for run in cell.runs
        if outcomes[run]["status"] == "ok" and outcomes[run].get("valid_mse") is not None
    ]
    return min(scored)[1] if scored else cell.key


def _improvement(baseline: object, candidate: object) -> float | None:
    """Relative MSE improvement, None when either run failed or the baseline is a perfect fit."""
    if baseline is None or candidate is None:
        return None
    try:
        return relative_improvement(float(baseline), float(candidate))  # type: ignore[arg-type]
    except DomainError:
        return None


def _mean(values) -> float | None:
    present = [float(v) for v in values if v is not None]
    return statistics.fmean(present) if present else None


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(path: Path, columns: Sequence[str], rows: Sequence[dict[str, object]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
