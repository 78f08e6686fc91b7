"""
JSON run configuration.

A run file looks like::

    {
      "dataset": {"synthetic": {"rows": 4000, "numeric": 4, "seed": 7}},
      "split": {"fractions": [0.8, 0.1, 0.1], "seed": 0},
      "model": {"hidden": [64, 32], "embedding_dim": 8},
      "train": {"learning_rate": 0.001, "epochs": 20, "batch_size": 256, "alpha": 0.1},
      "sweep": {"kind": "noise", "values": [0, 1, 2], "repeats": 5},
      "output_dir": "runs"
    }

``dataset`` holds exactly one of ``csv``, ``synthetic`` or ``series``.
Unknown keys are rejected so typos never fall back to a default silently.
"""

from __future__ import annotations

import json
import os
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Any, TypeVar

from .data import Schema
from .errors import ConfigError, DataError, DomainError
from .losses import LossSpec, PairMode, PairType, RegKind
from .train import TrainConfig

SEED_ENV = "ADAPRL_SEED"

T = TypeVar("T")


@dataclass(frozen=True)
class CsvSource:
    path: Path
    schema: Schema
    quantile_bins: tuple[str, ...] = ()
    bins: int = 16


@dataclass(frozen=True)
class SyntheticSource:
    rows: int
    numeric: int = 4
    seed: int = 0
    noise: bool = True


@dataclass(frozen=True)
class SeriesSource:
    length: int
    variates: int = 3
    lookback: int = 24
    horizon: int = 4
    seed: int = 0


DatasetSource = CsvSource | SyntheticSource | SeriesSource


@dataclass(frozen=True)
class SplitConfig:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0


@dataclass(frozen=True)
class MlpSettings:
    hidden: tuple[int, ...] = (64, 32)
    embedding_dim: int = 8


class SweepKind(StrEnum):
    ALPHA = "alpha"
    SPARSITY = "sparsity"
    NOISE = "noise"
    CORRUPTION = "corruption"
    FRACTION = "fraction"


DEFAULT_SWEEP_VALUES: dict[SweepKind, tuple[float, ...]] = {
    SweepKind.ALPHA: (0.01, 0.02, 0.05, 0.1, 0.2, 0.5),
    SweepKind.SPARSITY: (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    SweepKind.NOISE: (0.0, 1.0, 2.0, 3.0, 4.0, 5.0),
    SweepKind.CORRUPTION: (0.0, 1.0, 2.0, 3.0, 4.0, 5.0),
    SweepKind.FRACTION: (0.2, 0.4, 0.6, 0.8, 1.0),
}


@dataclass(frozen=True)
class SweepSpec:
    kind: SweepKind
    values: tuple[float, ...]
    repeats: int = 5
    column_fraction: float = 0.2
    # AdaPRL-arm candidates; each row keeps the one with the lowest validation MSE.
    alphas: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.values:
            raise DomainError("sweep needs at least one value")
        if self.alphas and self.kind in (SweepKind.ALPHA, SweepKind.SPARSITY):
            raise DomainError(f"alpha candidates only apply to data sweeps, not {self.kind}")
        if any(a <= 0.0 for a in self.alphas):
            raise DomainError(f"alpha candidates must be > 0, got {list(self.alphas)}")
        if self.repeats < 1:
            raise DomainError(f"repeats must be >= 1, got {self.repeats}")
        if self.kind in (SweepKind.NOISE, SweepKind.CORRUPTION):
            if any(v < 0 or v != int(v) for v in self.values):
                raise DomainError(f"{self.kind} levels must be non-negative integers, got {list(self.values)}")
        if self.kind is SweepKind.CORRUPTION and any(v > 10 for v in self.values):
            raise DomainError(f"corruption levels above 10 select more than every row, got {list(self.values)}")
        if self.kind in (SweepKind.SPARSITY, SweepKind.FRACTION) and any(not 0.0 < v <= 1.0 for v in self.values):
            raise DomainError(f"{self.kind} values must lie in (0, 1], got {list(self.values)}")
        if self.kind is SweepKind.ALPHA and any(v < 0.0 for v in self.values):
            raise DomainError(f"alpha values must be >= 0, got {list(self.values)}")


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSource
    train: TrainConfig
    split: SplitConfig = field(default_factory=SplitConfig)
    model: MlpSettings = field(default_factory=MlpSettings)
    sweep: SweepSpec | None = None
    output_dir: Path = Path("runs")
    source: Path | None = None

    def with_seed(self, seed: int) -> RunConfig:
        return replace(self, train=replace(self.train, seed=seed))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class _Section:
    """Key-path aware view of one JSON object."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, Mapping):
            raise ConfigError(f"'{path}' must be an object", key=path)
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def key(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def has(self, name: str) -> bool:
        return name in self.data

    def get(self, name: str, convert: Callable[[Any], T], default: T | None = None, required: bool = False) -> T:
        self.seen.add(name)
        if name not in self.data:
            if required:
                raise ConfigError(f"missing required key '{self.key(name)}'", key=self.key(name))
            return default  # type: ignore[return-value]
        try:
            return convert(self.data[name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for '{self.key(name)}': {exc}", key=self.key(name)) from exc

    def section(self, name: str, required: bool = False) -> _Section | None:
        self.seen.add(name)
        if name not in self.data:
            if required:
                raise ConfigError(f"missing required key '{self.key(name)}'", key=self.key(name))
            return None
        return _Section(self.data[name], self.key(name))

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ConfigError(f"unknown key '{self.key(unknown[0])}'", key=self.key(unknown[0]))


def _int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"expected an integer, got {value!r}")
    return value


def _float(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise TypeError(f"expected a number, got {value!r}")
    return float(value)


def _bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise TypeError(f"expected true or false, got {value!r}")
    return value


def _str(value: Any) -> str:
    if not isinstance(value, str):
        raise TypeError(f"expected a string, got {value!r}")
    return value


def _list_of(convert: Callable[[Any], T]) -> Callable[[Any], tuple[T, ...]]:
    def parse(value: Any) -> tuple[T, ...]:
        if not isinstance(value, list):
            raise TypeError(f"expected a list, got {value!r}")
        return tuple(convert(v) for v in value)

    return parse


def _validated(path: str, build: Callable[[], T]) -> T:
    try:
        return build()
    except (DomainError, DataError) as exc:
        raise ConfigError(f"invalid '{path}': {exc}", key=path) from exc


def _parse_dataset(root: _Section, base_dir: Path) -> DatasetSource:
    section = root.section("dataset", required=True)
    assert section is not None
    present = [name for name in ("csv", "synthetic", "series") if section.has(name)]
    if len(present) != 1:
        raise ConfigError(
            f"'dataset' needs exactly one of csv, synthetic, series (got {present or 'none'})", key="dataset"
        )

    source: DatasetSource
    match present[0]:
        case "csv":
            csv = section.section("csv")
            assert csv is not None
            path = Path(csv.get("path", _str, required=True))
            columns = csv.get("schema", lambda v: v, required=True)
            schema = _validated(csv.key("schema"), lambda: Schema.from_json(columns))
            source = CsvSource(
                path=path if path.is_absolute() else base_dir / path,
                schema=schema,
                quantile_bins=csv.get("quantile_bins", _list_of(_str), ()),
                bins=csv.get("bins", _int, 16),
            )
            csv.finish()
        case "synthetic":
            syn = section.section("synthetic")
            assert syn is not None
            source = SyntheticSource(
                rows=syn.get("rows", _int, required=True),
                numeric=syn.get("numeric", _int, 4),
                seed=syn.get("seed", _int, 0),
                noise=syn.get("noise", _bool, True),
            )
            syn.finish()
        case _:
            ser = section.section("series")
            assert ser is not None
            source = SeriesSource(
                length=ser.get("length", _int, required=True),
                variates=ser.get("variates", _int, 3),
                lookback=ser.get("lookback", _int, 24),
                horizon=ser.get("horizon", _int, 4),
                seed=ser.get("seed", _int, 0),
            )
            ser.finish()
    section.finish()
    return source


def _parse_train(root: _Section, dataset: DatasetSource) -> TrainConfig:
    section = root.section("train", required=True)
    assert section is not None
    series = isinstance(dataset, SeriesSource)
    default_mode = PairMode.TIME_SERIES if series else PairMode.SINGLE
    mode = section.get("mode", PairMode, default_mode)
    horizon_default = dataset.horizon if series and mode is PairMode.TIME_SERIES else 1

    learning_rate = section.get("learning_rate", _float, required=True)
    epochs = section.get("epochs", _int, required=True)
    batch_size = section.get("batch_size", _int, required=True)
    loss = _validated(
        "train",
        lambda: LossSpec(
            alpha=section.get("alpha", _float, 0.0),
            theta=section.get("theta", _float, 0.0),
            pair_type=section.get("pair_type", PairType, PairType.MAE),
            reg_kind=section.get("reg_kind", RegKind, RegKind.L2),
            huber_delta=section.get("huber_delta", _float, 1.0),
            mode=mode,
            keep_fraction=section.get("keep_fraction", _float, 1.0),
            horizon=section.get("horizon", _int, horizon_default),
        ),
    )
    config = _validated(
        "train",
        lambda: TrainConfig(
            learning_rate=learning_rate,
            epochs=epochs,
            batch_size=batch_size,
            loss=loss,
            patience=section.get("patience", _int, 3),
            seed=section.get("seed", _int, 0),
            restore_best=section.get("restore_best", _bool, True),
        ),
    )
    section.finish()
    return config


def parse_run_config(data: Any, base_dir: str | Path = ".", environ: Mapping[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from decoded JSON; ``ADAPRL_SEED`` in *environ* overrides ``train.seed``."""
    root = _Section(data, "")
    base = Path(base_dir)
    dataset = _parse_dataset(root, base)

    split = SplitConfig()
    if (section := root.section("split")) is not None:
        fractions = section.get("fractions", _list_of(_float), split.fractions)
        if len(fractions) != 3:
            raise ConfigError("'split.fractions' needs three values", key="split.fractions")
        split = SplitConfig(fractions=fractions, seed=section.get("seed", _int, 0))  # type: ignore[arg-type]
        section.finish()

    model = MlpSettings()
    if (section := root.section("model")) is not None:
        model = MlpSettings(
            hidden=section.get("hidden", _list_of(_int), model.hidden),
            embedding_dim=section.get("embedding_dim", _int, model.embedding_dim),
        )
        section.finish()

    train = _parse_train(root, dataset)

    sweep = None
    if (section := root.section("sweep")) is not None:
        kind = section.get("kind", SweepKind, required=True)
        sweep = _validated(
            "sweep",
            lambda: SweepSpec(
                kind=kind,
                values=section.get("values", _list_of(_float), DEFAULT_SWEEP_VALUES[kind]),
                repeats=section.get("repeats", _int, 5),
                column_fraction=section.get("column_fraction", _float, 0.2),
                alphas=section.get("alphas", _list_of(_float), ()),
            ),
        )
        section.finish()

    output_dir = Path(root.get("output_dir", _str, "runs"))
    root.finish()

    config = RunConfig(
        dataset=dataset,
        train=train,
        split=split,
        model=model,
        sweep=sweep,
        output_dir=output_dir if output_dir.is_absolute() else base / output_dir,
    )
    env = os.environ if environ is None else environ
    if (raw := env.get(SEED_ENV)) is not None:
        try:
            config = config.with_seed(int(raw))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}", key=SEED_ENV) from None
    return config


def load_run_config(path: str | Path, environ: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return replace(parse_run_config(data, path.parent, environ), source=path)
