"""
Mini-batch training of the main/auxiliary model pair.

One step builds a fresh graph, runs both networks on the batch, and takes
two Adam steps from the same forward pass: the main network on
``point-wise + alpha * pairwise`` and the auxiliary network on the Gaussian
NLL. Uncertainties reach the pairwise term as detached constants.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import TracebackType
from typing import IO

import numpy as np

from . import metrics
from .data import Dataset, rng_for
from .errors import DataError, DomainError, NonFiniteError, NumericalError
from .gradcore import Graph, Tensor
from .losses import LossSpec, PairMode, adaprl_loss
from .metrics import MetricReport
from .model import (
    PREDICT_CHUNK_ROWS,
    MlpConfig,
    ModelPair,
    bind,
    forward_aux,
    forward_main,
    init,
    predict_aux,
    predict_main,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    loss: LossSpec = field(default_factory=LossSpec)
    patience: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    restore_best: bool = True

    def __post_init__(self) -> None:
        if not self.learning_rate > 0.0:
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise DomainError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.patience < 0:
            raise DomainError(f"patience must be >= 0, got {self.patience}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0.0):
            raise DomainError(f"invalid Adam constants beta1={self.beta1} beta2={self.beta2} eps={self.eps}")


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    first: dict[str, Tensor] = field(default_factory=dict)
    second: dict[str, Tensor] = field(default_factory=dict)
    steps: int = 0


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict[str, Tensor]:
    """One bias-corrected Adam update. Advances *state* in place and returns new parameters."""
    state.steps += 1
    t = state.steps
    updated: dict[str, Tensor] = {}
    for name, value in params.items():
        g = grads[name]
        m = beta1 * state.first.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.second.get(name, 0.0) + (1.0 - beta2) * g * g
        state.first[name] = m
        state.second[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        updated[name] = value - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return updated


# ---------------------------------------------------------------------------
# Early stopping and logging
# ---------------------------------------------------------------------------


class EarlyStopping:
    """Tracks the best validation score; stops once more than ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = math.inf
        self.best_epoch = 0
        self.early_stop = False

    def __call__(self, score: float, epoch: int) -> bool:
        """Record *score* for *epoch*; returns True when it is a new best."""
        if score < self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            return True
        if epoch - self.best_epoch > self.patience:
            self.early_stop = True
        return False


class TrainLog:
    """Append-only JSON-lines record of step losses and epoch validation scores."""

    def __init__(self, path: str | Path | None = None):
        self.path = None if path is None else Path(path)
        self._fh: IO[str] | None = None

    def __enter__(self) -> TrainLog:
        if self.path is not None:
            self._fh = self.path.open("w", encoding="utf-8")
        return self

    def __exit__(
        self, exc_type: type[BaseException] | None, exc: BaseException | None, tb: TracebackType | None
    ) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def write(self, **record: object) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(record) + "\n")


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    main_loss: float
    aux_loss: float


@dataclass
class TrainState:
    pair: ModelPair
    main_moments: AdamState = field(default_factory=AdamState)
    aux_moments: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    step: int = 0
    best_epoch: int = 0
    best_valid_mse: float = math.inf
    stopped_early: bool = False
    trace: list[StepRecord] = field(default_factory=list)
    valid_history: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _check_compatible(train: Dataset, valid: Dataset, spec: LossSpec) -> None:
    if train.n_rows == 0:
        raise DataError("training set is empty")
    if valid.n_rows == 0:
        raise DataError("validation set is empty")
    if train.schema.all_names != valid.schema.all_names:
        raise DataError(
            f"train and validation schemas differ: {list(train.schema.all_names)} vs {list(valid.schema.all_names)}"
        )
    d_t = train.target_matrix().shape[1]
    if spec.mode is PairMode.TIME_SERIES and d_t % spec.horizon:
        raise DataError(f"{d_t} target columns are not divisible by horizon {spec.horizon}")


def _validation_mse(pair: ModelPair, valid: Dataset) -> float:
    return metrics.mse(predict_main(pair.main, valid), valid.target_matrix())


def _last_losses(trace: list[StepRecord]) -> dict[str, float]:
    if not trace:
        return {}
    last = trace[-1]
    return {"main_loss": last.main_loss, "aux_loss": last.aux_loss}


def train_step(state: TrainState, config: TrainConfig, train: Dataset, rows: np.ndarray) -> StepRecord:
    batch = train.batch(rows)
    graph = Graph()
    try:
        main = bind(graph, state.pair.main)
        aux = bind(graph, state.pair.aux)
        pred = forward_main(main, batch)
        mu, sigma2 = forward_aux(aux, batch)
        main_loss, aux_loss = adaprl_loss(
            pred, batch.targets, mu, sigma2, config.loss, mask_seed=config.seed, batch_index=state.step
        )
        main_grads = main.gradients(graph.backward(main_loss))
        aux_grads = aux.gradients(graph.backward(aux_loss))
        main_params = adam_step(
            state.pair.main.params,
            main_grads,
            state.main_moments,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
        )
        aux_params = adam_step(
            state.pair.aux.params,
            aux_grads,
            state.aux_moments,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
        )
        pair = ModelPair(main=state.pair.main.replace(main_params), aux=state.pair.aux.replace(aux_params))
    except NonFiniteError as exc:
        last = _last_losses(state.trace)
        detail = f"; last finite losses {last}" if last else ""
        raise NumericalError(
            f"non-finite value at epoch {state.epoch} step {state.step}: {exc}{detail}",
            step=state.step,
            last_losses=last,
        ) from exc

    record = StepRecord(state.epoch, state.step, float(main_loss.value), float(aux_loss.value))
    state.pair = pair
    state.step += 1
    state.trace.append(record)
    return record


def fit(
    config: TrainConfig,
    train: Dataset,
    valid: Dataset,
    model: MlpConfig | None = None,
    log: TrainLog | None = None,
) -> TrainState:
    """Train from a seeded initialisation; early-stops on validation MSE."""
    _check_compatible(train, valid, config.loss)
    model = model or MlpConfig.for_dataset(train)
    state = TrainState(pair=init(model, config.seed))
    log = log or TrainLog()
    stopper = EarlyStopping(config.patience)
    best_pair = state.pair
    n = train.n_rows

    logger.info(
        "training %d rows (%d valid) for up to %d epochs, batch %d, alpha %g",
        n,
        valid.n_rows,
        config.epochs,
        config.batch_size,
        config.loss.alpha,
    )
    for epoch in range(1, config.epochs + 1):
        state.epoch = epoch
        order = rng_for(config.seed, epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            record = train_step(state, config, train, order[start : start + config.batch_size])
            log.write(epoch=epoch, step=record.step, main_loss=record.main_loss, aux_loss=record.aux_loss)

        score = _validation_mse(state.pair, valid)
        state.valid_history.append(score)
        log.write(epoch=epoch, step=state.step, valid_mse=score)
        if stopper(score, epoch):
            best_pair = state.pair
        logger.debug("epoch %d: valid mse %.6g (best %.6g at %d)", epoch, score, stopper.best_score, stopper.best_epoch)
        if stopper.early_stop:
            logger.info(
                "early stop at epoch %d; best valid mse %.6g at epoch %d", epoch, stopper.best_score, stopper.best_epoch
            )
            state.stopped_early = True
            break

    state.best_epoch = stopper.best_epoch
    state.best_valid_mse = stopper.best_score
    if config.restore_best:
        state.pair = best_pair
    return state


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Evaluation:
    report: MetricReport
    predictions: Tensor
    mu: Tensor
    sigma: Tensor


def _predict_chunk(pair: ModelPair, ds: Dataset) -> tuple[Tensor, Tensor, Tensor]:
    mu, sigma2 = predict_aux(pair.aux, ds)
    return predict_main(pair.main, ds), mu, np.sqrt(sigma2)


def predict_all(
    pair: ModelPair, ds: Dataset, jobs: int = 1, chunk_rows: int = PREDICT_CHUNK_ROWS
) -> tuple[Tensor, Tensor, Tensor]:
    """(predictions, mu, sigma) for every row, computed in fixed-size chunks."""
    chunks = [ds.take(np.arange(s, min(ds.n_rows, s + chunk_rows))) for s in range(0, ds.n_rows, chunk_rows)]
    if not chunks:
        return _predict_chunk(pair, ds)
    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda c: _predict_chunk(pair, c), chunks))
    else:
        parts = [_predict_chunk(pair, c) for c in chunks]
    return tuple(np.concatenate([p[k] for p in parts], axis=0) for k in range(3))  # type: ignore[return-value]


def evaluate(state: TrainState | ModelPair, ds: Dataset, jobs: int = 1) -> Evaluation:
    """Metrics of the main network on *ds*, plus the auxiliary uncertainties."""
    pair = state.pair if isinstance(state, TrainState) else state
    if ds.n_rows == 0:
        raise DataError("cannot evaluate on an empty dataset")
    pred, mu, sigma = predict_all(pair, ds, jobs=jobs)
    targets = ds.target_matrix()
    if targets.shape != pred.shape:
        raise DataError(f"dataset has {targets.shape[1]} target column(s), model predicts {pred.shape[1]}")
    result = metrics.report(pred, targets, weights=ds.weight_vector(), sigma=sigma)
    return Evaluation(report=result, predictions=pred, mu=mu, sigma=sigma)

