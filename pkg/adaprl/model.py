"""
Main and auxiliary MLP regressors.

Both networks share one input layout: numeric columns plus one learned
embedding per categorical column. The first layer is evaluated as a sum of
block products (numeric block, one block per embedding) which equals a
dense layer over the concatenated input.

The main network emits ``d_t`` point predictions. The auxiliary network
emits ``2 * d_t`` values split into a mean and a raw log-variance; the
variance is ``exp(clamp(raw, -10, 10))`` so it stays strictly positive.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from .data import SEED_MASK, Batch, Dataset
from .errors import DataError, DomainError
from .gradcore import Graph, Node, Tensor, as_tensor, clamp, exp, relu, take

logger = logging.getLogger(__name__)

LOG_VARIANCE_MIN = -10.0
LOG_VARIANCE_MAX = 10.0
EMBEDDING_INIT_STD = 0.01
PREDICT_CHUNK_ROWS = 4096


@dataclass(frozen=True)
class MlpConfig:
    numeric_names: tuple[str, ...]
    categorical_names: tuple[str, ...]
    vocab_sizes: tuple[int, ...]
    target_names: tuple[str, ...]
    hidden: tuple[int, ...] = (64, 32)
    embedding_dim: int = 8

    def __post_init__(self) -> None:
        if len(self.vocab_sizes) != len(self.categorical_names):
            raise DomainError(
                f"{len(self.vocab_sizes)} vocabulary sizes for {len(self.categorical_names)} categorical columns"
            )
        if any(v < 1 for v in self.vocab_sizes):
            raise DomainError(f"vocabulary sizes must be >= 1, got {self.vocab_sizes}")
        if any(h < 1 for h in self.hidden):
            raise DomainError(f"hidden widths must be >= 1, got {self.hidden}")
        if self.embedding_dim < 1:
            raise DomainError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if not self.target_names:
            raise DomainError("model needs at least one target")
        if self.input_width < 1:
            raise DomainError("model needs at least one input column")

    @property
    def n_targets(self) -> int:
        return len(self.target_names)

    @property
    def input_width(self) -> int:
        return len(self.numeric_names) + len(self.categorical_names) * self.embedding_dim

    @classmethod
    def for_dataset(cls, ds: Dataset, hidden: tuple[int, ...] = (64, 32), embedding_dim: int = 8) -> MlpConfig:
        batch = ds.batch(np.arange(0))
        return cls(
            numeric_names=batch.numeric_names,
            categorical_names=batch.categorical_names,
            vocab_sizes=tuple(len(ds.vocabularies[c]) for c in batch.categorical_names),
            target_names=batch.target_names,
            hidden=tuple(hidden),
            embedding_dim=embedding_dim,
        )

    def to_json(self) -> dict:
        return {
            "numeric_names": list(self.numeric_names),
            "categorical_names": list(self.categorical_names),
            "vocab_sizes": list(self.vocab_sizes),
            "target_names": list(self.target_names),
            "hidden": list(self.hidden),
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> MlpConfig:
        return cls(
            numeric_names=tuple(data["numeric_names"]),
            categorical_names=tuple(data["categorical_names"]),
            vocab_sizes=tuple(int(v) for v in data["vocab_sizes"]),
            target_names=tuple(data["target_names"]),
            hidden=tuple(int(h) for h in data["hidden"]),
            embedding_dim=int(data["embedding_dim"]),
        )


@dataclass(frozen=True)
class Network:
    """Immutable parameter set of one MLP. Updates produce a new Network."""

    config: MlpConfig
    out_width: int
    params: Mapping[str, Tensor] = field(repr=False)

    def replace(self, params: Mapping[str, Tensor]) -> Network:
        if params.keys() != self.params.keys():
            raise DomainError("parameter names differ from the network layout")
        return Network(self.config, self.out_width, {k: as_tensor(params[k]) for k in self.params})

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass(frozen=True)
class ModelPair:
    main: Network
    aux: Network

    @property
    def config(self) -> MlpConfig:
        return self.main.config


def _layer_shapes(config: MlpConfig, out_width: int) -> Iterator[tuple[str, tuple[int, ...]]]:
    widths = [*config.hidden, out_width]
    first = widths[0]
    for c, vocab in enumerate(config.vocab_sizes):
        yield f"emb.{c}", (vocab, config.embedding_dim)
    if config.numeric_names:
        yield "layer0.w_num", (len(config.numeric_names), first)
    for c in range(len(config.categorical_names)):
        yield f"layer0.w_emb.{c}", (config.embedding_dim, first)
    yield "layer0.b", (first,)
    for i in range(1, len(widths)):
        yield f"layer{i}.w", (widths[i - 1], widths[i])
        yield f"layer{i}.b", (widths[i],)


def _init_network(config: MlpConfig, out_width: int, rng: np.random.Generator) -> Network:
    widths = [*config.hidden, out_width]
    params: dict[str, Tensor] = {}
    for name, shape in _layer_shapes(config, out_width):
        if name.startswith("emb."):
            values = rng.normal(0.0, EMBEDDING_INIT_STD, size=shape)
        elif name.endswith(".b"):
            values = np.zeros(shape)
        else:
            # Glorot-uniform over the full (concatenated) layer fan-in.
            layer = int(name.split(".")[0].removeprefix("layer"))
            fan_in = config.input_width if layer == 0 else widths[layer - 1]
            limit = math.sqrt(6.0 / (fan_in + widths[layer]))
            values = rng.uniform(-limit, limit, size=shape)
        params[name] = as_tensor(values)
    return Network(config, out_width, params)


def init(config: MlpConfig, seed: int) -> ModelPair:
    """Seeded initialisation of both networks (independent child streams)."""
    main_ss, aux_ss = np.random.SeedSequence(seed & SEED_MASK).spawn(2)
    pair = ModelPair(
        main=_init_network(config, config.n_targets, np.random.default_rng(main_ss)),
        aux=_init_network(config, 2 * config.n_targets, np.random.default_rng(aux_ss)),
    )
    logger.debug(
        "initialised model pair: %d main / %d aux parameters", pair.main.n_parameters, pair.aux.n_parameters
    )
    return pair


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundNetwork:
    """A network whose parameters are nodes of one graph."""

    network: Network
    graph: Graph
    nodes: Mapping[str, Node]

    def gradients(self, grads: Mapping[Node, Tensor]) -> dict[str, Tensor]:
        return {name: grads[node] for name, node in self.nodes.items()}


def bind(graph: Graph, network: Network, trainable: bool = True) -> BoundNetwork:
    add = graph.leaf if trainable else graph.constant
    return BoundNetwork(network, graph, {name: add(values) for name, values in network.params.items()})


def _check_layout(config: MlpConfig, batch: Batch) -> None:
    if batch.numeric_names != config.numeric_names or batch.categorical_names != config.categorical_names:
        raise DataError(
            "feature columns do not match the model: "
            f"got {list(batch.numeric_names + batch.categorical_names)}, "
            f"expected {list(config.numeric_names + config.categorical_names)}"
        )
    for c, (name, vocab) in enumerate(zip(config.categorical_names, config.vocab_sizes, strict=True)):
        codes = batch.categorical[:, c]
        bad = codes[(codes < 0) | (codes >= vocab)]
        if bad.size:
            raise DataError(
                f"out-of-vocabulary code {int(bad[0])} in column {name!r} (vocabulary size {vocab})", column=name
            )


def _tile(bias: Node, rows: int) -> Node:
    width = bias.shape[0]
    return take(bias, np.broadcast_to(np.arange(width), (rows, width)))


def _mlp(bound: BoundNetwork, batch: Batch) -> Node:
    config = bound.network.config
    _check_layout(config, batch)
    graph, p = bound.graph, bound.nodes
    rows = batch.size
    d = config.embedding_dim

    h: Node | None = None
    if config.numeric_names:
        h = graph.constant(batch.numeric) @ p["layer0.w_num"]
    for c in range(len(config.categorical_names)):
        codes = batch.categorical[:, c].astype(np.intp)
        embedded = take(p[f"emb.{c}"], codes[:, None] * d + np.arange(d))
        block = embedded @ p[f"layer0.w_emb.{c}"]
        h = block if h is None else h + block
    assert h is not None
    h = h + _tile(p["layer0.b"], rows)

    n_layers = len(config.hidden) + 1
    for i in range(1, n_layers):
        h = relu(h) @ p[f"layer{i}.w"] + _tile(p[f"layer{i}.b"], rows)
    return h


def forward_main(bound: BoundNetwork, batch: Batch) -> Node:
    """Point predictions, shape (B, d_t)."""
    return _mlp(bound, batch)


def forward_aux(bound: BoundNetwork, batch: Batch) -> tuple[Node, Node]:
    """(mu, sigma^2), each of shape (B, d_t); sigma^2 > 0."""
    out = _mlp(bound, batch)
    d_t = bound.network.config.n_targets
    rows = np.arange(batch.size)[:, None] * (2 * d_t)
    mu = take(out, rows + np.arange(d_t))
    raw = take(out, rows + d_t + np.arange(d_t))
    return mu, exp(clamp(raw, LOG_VARIANCE_MIN, LOG_VARIANCE_MAX))


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def _chunks(n: int, size: int) -> list[np.ndarray]:
    return [np.arange(start, min(n, start + size)) for start in range(0, n, size)] or [np.arange(0)]


def predict_main(network: Network, ds: Dataset, chunk_rows: int = PREDICT_CHUNK_ROWS) -> Tensor:
    parts = []
    for rows in _chunks(ds.n_rows, chunk_rows):
        graph = Graph()
        parts.append(forward_main(bind(graph, network, trainable=False), ds.batch(rows)).value)
    return np.concatenate(parts, axis=0)


def predict_aux(network: Network, ds: Dataset, chunk_rows: int = PREDICT_CHUNK_ROWS) -> tuple[Tensor, Tensor]:
    mus, variances = [], []
    for rows in _chunks(ds.n_rows, chunk_rows):
        graph = Graph()
        mu, sigma2 = forward_aux(bind(graph, network, trainable=False), ds.batch(rows))
        mus.append(mu.value)
        variances.append(sigma2.value)
    return np.concatenate(mus, axis=0), np.concatenate(variances, axis=0)
