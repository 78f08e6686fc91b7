"""Dataset preparation and the single train-then-evaluate run shared by every command."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

from .config import CsvSource, DatasetSource, RunConfig, SeriesSource, SyntheticSource
from .data import (
    Dataset,
    apply_bins,
    load_csv,
    quantile_edges,
    split_chronological,
    split_random,
    synth_heteroscedastic,
    synth_series,
    window_series,
)
from .model import MlpConfig
from .train import Evaluation, TrainConfig, TrainLog, TrainState, evaluate, fit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Splits:
    train: Dataset
    valid: Dataset
    test: Dataset
    # Interior quantile edges of every binned column, learnt on the training split.
    bin_edges: Mapping[str, tuple[float, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class RunResult:
    state: TrainState
    valid: Evaluation
    test: Evaluation


def load_dataset(source: DatasetSource) -> Dataset:
    match source:
        case CsvSource():
            return load_csv(source.path, source.schema)
        case SyntheticSource():
            return synth_heteroscedastic(source.rows, source.numeric, source.seed, noise=source.noise)
        case SeriesSource():
            series = synth_series(source.length, source.variates, source.seed)
            return window_series(series, source.lookback, source.horizon)


def prepare_splits(config: RunConfig, repeat: int = 0, dataset: Dataset | None = None) -> Splits:
    """Load (unless given), split and bin. *repeat* shifts the split seed."""
    ds = dataset if dataset is not None else load_dataset(config.dataset)
    if isinstance(config.dataset, SeriesSource):
        train, valid, test = split_chronological(ds, config.split.fractions)
    else:
        train, valid, test = split_random(ds, config.split.fractions, config.split.seed + repeat)
    edges: dict[str, tuple[float, ...]] = {}
    if isinstance(config.dataset, CsvSource):
        for column in config.dataset.quantile_bins:
            cuts = quantile_edges(train.column(column), config.dataset.bins)
            train, valid, test = (apply_bins(part, column, cuts) for part in (train, valid, test))
            edges[column] = tuple(float(e) for e in cuts)
    logger.debug("split %d/%d/%d rows", train.n_rows, valid.n_rows, test.n_rows)
    return Splits(train, valid, test, edges)


def model_config(config: RunConfig, train: Dataset) -> MlpConfig:
    return MlpConfig.for_dataset(train, hidden=config.model.hidden, embedding_dim=config.model.embedding_dim)


def train_and_evaluate(
    config: RunConfig,
    splits: Splits,
    train_config: TrainConfig | None = None,
    log: TrainLog | None = None,
    jobs: int = 1,
    test: Dataset | None = None,
) -> RunResult:
    """Fit on ``splits.train`` (early stopping on ``splits.valid``) and evaluate.

    *test* replaces ``splits.test`` for evaluation only (corrupted inputs).
    """
    state = fit(train_config or config.train, splits.train, splits.valid, model_config(config, splits.train), log)
    return RunResult(
        state=state,
        valid=evaluate(state, splits.valid, jobs=jobs),
        test=evaluate(state, test if test is not None else splits.test, jobs=jobs),
    )
