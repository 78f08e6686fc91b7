"""
Tabular datasets, seeded splits, synthetic generators and the perturbation
injectors used by the robustness experiments.

Datasets are immutable: every operation returns a new ``Dataset`` and never
writes into the arrays of its input. All randomness is drawn from
``numpy.random.Generator`` streams seeded from explicit integers.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .errors import DataError, DomainError

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1


def rng_for(*words: int) -> np.random.Generator:
    """Generator seeded from a tuple of integers (negative values wrap to 64 bits)."""
    return np.random.default_rng(np.random.SeedSequence([w & SEED_MASK for w in words]))


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


class ColumnKind(StrEnum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    TARGET = "target"
    WEIGHT = "weight"


@dataclass(frozen=True, slots=True)
class Column:
    name: str
    kind: ColumnKind


@dataclass(frozen=True)
class Schema:
    """Ordered column declarations.

    ``require_target`` is switched off only for inference inputs, which may
    carry features alone.
    """

    columns: tuple[Column, ...]
    require_target: bool = field(default=True, compare=False)

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate column names in schema: {names}")
        if self.require_target and not self.names(ColumnKind.TARGET):
            raise DataError("schema declares no target column")
        if len(self.names(ColumnKind.WEIGHT)) > 1:
            raise DataError("schema declares more than one weight column")

    def names(self, kind: ColumnKind) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.kind is kind)

    @property
    def all_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def kind_of(self, name: str) -> ColumnKind:
        for c in self.columns:
            if c.name == name:
                return c.kind
        raise DataError(f"unknown column {name!r}", column=name)

    def to_json(self) -> list[dict[str, str]]:
        return [{"name": c.name, "kind": c.kind.value} for c in self.columns]

    @classmethod
    def from_json(cls, items: Iterable[Mapping[str, str]], require_target: bool = True) -> Schema:
        try:
            columns = tuple(Column(str(item["name"]), ColumnKind(item["kind"])) for item in items)
        except (KeyError, ValueError) as exc:
            raise DataError(f"malformed schema entry: {exc}") from exc
        return cls(columns, require_target=require_target)

    def features_only(self) -> Schema:
        keep = tuple(c for c in self.columns if c.kind in (ColumnKind.NUMERIC, ColumnKind.CATEGORICAL))
        return Schema(keep, require_target=False)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Batch:
    """Model-ready view of a set of rows (column order follows the schema)."""

    numeric: npt.NDArray[np.float64]
    categorical: npt.NDArray[np.int64]
    numeric_names: tuple[str, ...]
    categorical_names: tuple[str, ...]
    targets: npt.NDArray[np.float64]
    target_names: tuple[str, ...]
    weights: npt.NDArray[np.float64] | None = None

    @property
    def size(self) -> int:
        return int(self.targets.shape[0])


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: Schema
    columns: Mapping[str, np.ndarray]
    vocabularies: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    # Ground-truth columns of generated data; never part of a Batch.
    hidden: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lengths = {name: len(values) for name, values in self.columns.items()}
        missing = [n for n in self.schema.all_names if n not in self.columns]
        if missing:
            raise DataError(f"columns missing from storage: {missing}")
        if len(set(lengths.values())) > 1:
            raise DataError(f"columns have unequal lengths: {lengths}")
        for name in self.schema.names(ColumnKind.CATEGORICAL):
            codes = self.columns[name]
            vocab = self.vocabularies.get(name, ())
            if len(codes) and (codes.min() < 0 or codes.max() >= len(vocab)):
                raise DataError(f"categorical codes of {name!r} exceed its vocabulary of {len(vocab)}", column=name)

    @property
    def n_rows(self) -> int:
        if not self.schema.columns:
            return 0
        return len(self.columns[self.schema.columns[0].name])

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise DataError(f"unknown column {name!r}", column=name)
        return self.columns[name]

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.schema.names(ColumnKind.NUMERIC) + self.schema.names(ColumnKind.CATEGORICAL)

    def target_matrix(self) -> npt.NDArray[np.float64]:
        names = self.schema.names(ColumnKind.TARGET)
        if not names:
            return np.zeros((self.n_rows, 0))
        return np.column_stack([self.columns[n] for n in names]).astype(np.float64)

    def weight_vector(self) -> npt.NDArray[np.float64] | None:
        names = self.schema.names(ColumnKind.WEIGHT)
        return None if not names else np.asarray(self.columns[names[0]], dtype=np.float64)

    def take(self, rows: npt.ArrayLike) -> Dataset:
        """Dataset restricted to *rows* (in the given order)."""
        idx = np.asarray(rows, dtype=np.intp)
        columns = {name: _readonly(values[idx]) for name, values in self.columns.items()}
        hidden = {name: _readonly(values[idx]) for name, values in self.hidden.items()}
        return Dataset(self.schema, columns, self.vocabularies, hidden)

    def with_columns(
        self,
        replacements: Mapping[str, np.ndarray],
        schema: Schema | None = None,
        vocabularies: Mapping[str, tuple[str, ...]] | None = None,
    ) -> Dataset:
        columns = dict(self.columns)
        for name, values in replacements.items():
            columns[name] = _readonly(np.array(values))
        return Dataset(schema or self.schema, columns, vocabularies or self.vocabularies, self.hidden)

    def batch(self, rows: npt.ArrayLike | None = None) -> Batch:
        view = self if rows is None else self.take(rows)
        n = view.n_rows
        numeric_names = self.schema.names(ColumnKind.NUMERIC)
        categorical_names = self.schema.names(ColumnKind.CATEGORICAL)
        numeric = (
            np.column_stack([view.columns[c] for c in numeric_names]).astype(np.float64)
            if numeric_names
            else np.zeros((n, 0))
        )
        categorical = (
            np.column_stack([view.columns[c] for c in categorical_names]).astype(np.int64)
            if categorical_names
            else np.zeros((n, 0), dtype=np.int64)
        )
        return Batch(
            numeric=numeric.reshape(n, len(numeric_names)),
            categorical=categorical.reshape(n, len(categorical_names)),
            numeric_names=numeric_names,
            categorical_names=categorical_names,
            targets=view.target_matrix().reshape(n, len(self.schema.names(ColumnKind.TARGET))),
            target_names=self.schema.names(ColumnKind.TARGET),
            weights=view.weight_vector(),
        )


def from_arrays(
    schema: Schema,
    columns: Mapping[str, npt.ArrayLike],
    vocabularies: Mapping[str, Sequence[str]] | None = None,
    hidden: Mapping[str, npt.ArrayLike] | None = None,
) -> Dataset:
    """Build a Dataset, coercing numeric/target/weight columns to float64 and categoricals to int64."""
    stored: dict[str, np.ndarray] = {}
    for col in schema.columns:
        dtype = np.int64 if col.kind is ColumnKind.CATEGORICAL else np.float64
        stored[col.name] = _readonly(np.array(columns[col.name], dtype=dtype).reshape(-1))
    vocab = {name: tuple(values) for name, values in (vocabularies or {}).items()}
    extra = {name: _readonly(np.array(values, dtype=np.float64)) for name, values in (hidden or {}).items()}
    return Dataset(schema, stored, vocab, extra)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_csv(
    path: str | Path,
    schema: Schema,
    vocabularies: Mapping[str, Sequence[str]] | None = None,
) -> Dataset:
    """Read a header-first, comma-separated UTF-8 file declared by *schema*.

    Categorical vocabularies are built in first-appearance order, starting
    from *vocabularies* when given (labels not seen before are appended, so
    an out-of-vocabulary label surfaces later as an out-of-range code).
    Row numbers in diagnostics are file line numbers (the header is row 1).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"empty file: {path}")
        header = [h.strip() for h in header]
        expected = list(schema.all_names)
        if header != expected:
            raise DataError(f"header {','.join(header)!r} does not match schema {','.join(expected)!r}")

        raw: dict[str, list] = {name: [] for name in expected}
        vocab: dict[str, dict[str, int]] = {
            name: {label: code for code, label in enumerate((vocabularies or {}).get(name, ()))}
            for name in schema.names(ColumnKind.CATEGORICAL)
        }
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DataError(
                    f"row {row_number} has {len(row)} cells, expected {len(expected)}",
                    row=row_number,
                )
            for col, cell in zip(schema.columns, row, strict=True):
                if col.kind is ColumnKind.CATEGORICAL:
                    codes = vocab[col.name]
                    raw[col.name].append(codes.setdefault(cell.strip(), len(codes)))
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"cannot parse {cell!r} as a number at (row {row_number}, column {col.name})",
                        row=row_number,
                        column=col.name,
                    ) from None
                if not math.isfinite(value):
                    raise DataError(
                        f"non-finite value {cell!r} at (row {row_number}, column {col.name})",
                        row=row_number,
                        column=col.name,
                    )
                raw[col.name].append(value)

    if not raw[expected[0]]:
        raise DataError(f"no data rows in {path}")
    vocabs = {name: tuple(sorted(codes, key=codes.__getitem__)) for name, codes in vocab.items()}
    logger.debug("loaded %d rows from %s", len(raw[expected[0]]), path)
    return from_arrays(schema, raw, vocabs)


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write *ds* in the format ``load_csv`` reads (shortest round-trip floats)."""
    names = ds.schema.all_names
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        cols = []
        for name in names:
            values = ds.columns[name]
            if ds.schema.kind_of(name) is ColumnKind.CATEGORICAL:
                vocab = ds.vocabularies[name]
                cols.append([vocab[int(code)] for code in values])
            else:
                cols.append([repr(float(v)) for v in values])
        for row in zip(*cols, strict=True):
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Splitting and sampling
# ---------------------------------------------------------------------------


def split_random(ds: Dataset, fractions: Sequence[float], seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded permutation, then a contiguous train/valid/test cut.

    Valid and test sizes are floor(fraction * rows), raised to one row each;
    the remainder goes to train.
    """
    n_train, n_valid = _split_sizes(ds.n_rows, fractions)
    return _cut(ds, rng_for(seed).permutation(ds.n_rows), n_train, n_valid)


def split_chronological(ds: Dataset, fractions: Sequence[float]) -> tuple[Dataset, Dataset, Dataset]:
    """Same sizes as ``split_random`` but cut in row order (for windowed series)."""
    n_train, n_valid = _split_sizes(ds.n_rows, fractions)
    return _cut(ds, np.arange(ds.n_rows), n_train, n_valid)


def _split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int]:
    if len(fractions) != 3 or any(f <= 0.0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DomainError(f"split fractions must be three positive numbers summing to 1, got {list(fractions)}")
    if n < 3:
        raise DataError(f"cannot split {n} row(s) into train/valid/test")
    n_valid = max(1, math.floor(n * fractions[1]))
    n_test = max(1, math.floor(n * fractions[2]))
    n_train = n - n_valid - n_test
    if n_train < 1:
        raise DataError(f"split of {n} rows leaves no training rows")
    return n_train, n_valid


def _cut(ds: Dataset, order: np.ndarray, n_train: int, n_valid: int) -> tuple[Dataset, Dataset, Dataset]:
    return (
        ds.take(order[:n_train]),
        ds.take(order[n_train : n_train + n_valid]),
        ds.take(order[n_train + n_valid :]),
    )


def subsample(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniform sample without replacement of ceil(fraction * rows) rows, original order kept."""
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"subsample fraction must lie in (0, 1], got {fraction!r}")
    n = ds.n_rows
    count = math.ceil(fraction * n)
    if count >= n:
        return ds
    rows = np.sort(rng_for(seed).choice(n, size=count, replace=False))
    return ds.take(rows)


# ---------------------------------------------------------------------------
# Perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class NoiseSpec:
    level: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.level < 0:
            raise DomainError(f"noise level must be >= 0, got {self.level}")


@dataclass(frozen=True, slots=True)
class CorruptionSpec:
    level: int
    column_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.column_fraction <= 1.0:
            raise DomainError(f"column fraction must lie in [0, 1], got {self.column_fraction!r}")
        if self.level < 0:
            raise DomainError(f"corruption level must be >= 0, got {self.level}")
        if self.level > 10:
            raise DomainError(f"corruption level {self.level} selects more than 100% of rows")


def inject_label_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Add N(0, (0.2k * std(y))^2) noise to every target column.

    std is the population standard deviation of the clean targets.
    """
    if spec.level == 0:
        return ds
    rng = rng_for(spec.seed, spec.level)
    noisy: dict[str, np.ndarray] = {}
    for name in ds.schema.names(ColumnKind.TARGET):
        y = np.asarray(ds.columns[name], dtype=np.float64)
        scale = 0.2 * spec.level * float(np.std(y))
        noisy[name] = y + rng.normal(0.0, scale, size=y.shape)
    return ds.with_columns(noisy)


def corrupt_columns(valid: Dataset, test: Dataset, spec: CorruptionSpec) -> tuple[Dataset, Dataset]:
    """Shuffle values of a seeded column subset within 10k% of the rows.

    The column choice depends on the seed only, so every level of a sweep
    corrupts the same columns.
    """
    features = valid.feature_names
    if not features or spec.level == 0:
        return valid, test
    n_cols = math.ceil(spec.column_fraction * len(features))
    chosen = sorted(rng_for(spec.seed).choice(len(features), size=n_cols, replace=False).tolist())
    names = [features[i] for i in chosen]
    logger.debug("corrupting columns %s at level %d", names, spec.level)

    def corrupt(ds: Dataset, stream: int) -> Dataset:
        n = ds.n_rows
        count = math.floor(n * spec.level / 10)
        if count < 2:
            return ds
        rng = rng_for(spec.seed, stream, spec.level)
        rows = rng.choice(n, size=count, replace=False)
        replacements = {}
        for name in names:
            values = np.array(ds.columns[name])
            values[rows] = values[rng.permutation(rows)]
            replacements[name] = values
        return ds.with_columns(replacements)

    return corrupt(valid, 1), corrupt(test, 2)


def quantile_edges(values: npt.ArrayLike, bins: int = 16) -> npt.NDArray[np.float64]:
    """Interior equal-frequency edges of *values* (duplicates collapsed)."""
    if bins < 2:
        raise DomainError(f"need at least 2 bins, got {bins}")
    return np.unique(np.quantile(np.asarray(values, dtype=np.float64), np.linspace(0.0, 1.0, bins + 1)[1:-1]))


def apply_bins(ds: Dataset, column: str, edges: npt.ArrayLike) -> Dataset:
    """Replace numeric *column* by its bin codes under *edges*; labels are ``q0``, ``q1``, ..."""
    if ds.schema.kind_of(column) is not ColumnKind.NUMERIC:
        raise DataError(f"column {column!r} is not numeric", column=column)
    cuts = np.asarray(edges, dtype=np.float64)
    codes = np.searchsorted(cuts, ds.columns[column], side="right").astype(np.int64)
    schema = Schema(
        tuple(Column(c.name, ColumnKind.CATEGORICAL) if c.name == column else c for c in ds.schema.columns),
        require_target=ds.schema.require_target,
    )
    vocabularies = dict(ds.vocabularies)
    vocabularies[column] = tuple(f"q{i}" for i in range(cuts.size + 1))
    return ds.with_columns({column: codes}, schema=schema, vocabularies=vocabularies)


def quantile_bins(
    train: Dataset, others: Sequence[Dataset], column: str, bins: int = 16
) -> tuple[Dataset, list[Dataset]]:
    """Replace numeric *column* by equal-frequency bin codes (edges from *train*)."""
    if train.schema.kind_of(column) is not ColumnKind.NUMERIC:
        raise DataError(f"column {column!r} is not numeric", column=column)
    edges = quantile_edges(train.columns[column], bins)
    return apply_bins(train, column, edges), [apply_bins(ds, column, edges) for ds in others]


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

# sigma*(x) spans [SIGMA_FLOOR, 10 * SIGMA_FLOOR] across the input cube.
SIGMA_FLOOR = 0.1
_FSTAR_HIDDEN = 16


def synth_heteroscedastic(n: int, d_numeric: int, seed: int, noise: bool = True) -> Dataset:
    """x ~ U(-1, 1)^d, y = f*(x) + sigma*(x) * eps.

    f* is a fixed random tanh network drawn from *seed*; sigma* grows
    log-linearly with the first feature over a 10x range. The ground truth is
    kept in ``Dataset.hidden`` as ``f_star`` and ``sigma_star``.
    """
    if n < 1:
        raise DomainError(f"need at least one row, got {n}")
    if d_numeric < 1:
        raise DomainError(f"need at least one feature, got {d_numeric}")
    net_ss, x_ss, eps_ss = np.random.SeedSequence(seed & SEED_MASK).spawn(3)

    net = np.random.default_rng(net_ss)
    w1 = net.normal(0.0, 1.0, size=(d_numeric, _FSTAR_HIDDEN)) * (2.0 / math.sqrt(d_numeric))
    b1 = net.normal(0.0, 0.5, size=_FSTAR_HIDDEN)
    w2 = net.normal(0.0, 1.0, size=_FSTAR_HIDDEN) / math.sqrt(_FSTAR_HIDDEN)

    x = np.random.default_rng(x_ss).uniform(-1.0, 1.0, size=(n, d_numeric))
    f_star = np.tanh(x @ w1 + b1) @ w2
    sigma_star = SIGMA_FLOOR * np.power(10.0, (x[:, 0] + 1.0) / 2.0)
    y = f_star + sigma_star * np.random.default_rng(eps_ss).standard_normal(n) if noise else f_star.copy()

    names = [f"x{i}" for i in range(d_numeric)]
    schema = Schema(tuple(Column(c, ColumnKind.NUMERIC) for c in names) + (Column("y", ColumnKind.TARGET),))
    columns: dict[str, npt.ArrayLike] = {c: x[:, i] for i, c in enumerate(names)}
    columns["y"] = y
    return from_arrays(schema, columns, hidden={"f_star": f_star, "sigma_star": sigma_star})


def synth_series(length: int, variates: int, seed: int) -> npt.NDArray[np.float64]:
    """Multivariate seasonal series with heteroscedastic noise, shape (length, variates)."""
    if length < 2 or variates < 1:
        raise DomainError(f"need length >= 2 and variates >= 1, got {length}, {variates}")
    rng = rng_for(seed)
    t = np.arange(length, dtype=np.float64)[:, None]
    periods = rng.uniform(12.0, 48.0, size=variates)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=variates)
    amplitude = rng.uniform(0.5, 2.0, size=variates)
    trend = rng.normal(0.0, 0.002, size=variates)
    seasonal = amplitude * np.sin(2.0 * math.pi * t / periods + phases) + trend * t
    noise_scale = 0.05 + 0.25 * (1.0 + np.sin(2.0 * math.pi * t / (3.0 * periods))) / 2.0
    return seasonal + noise_scale * rng.standard_normal((length, variates))


def window_series(
    series: npt.ArrayLike,
    lookback: int,
    horizon: int,
    names: Sequence[str] | None = None,
) -> Dataset:
    """Sliding windows: lag features ``{v}_lag{l}`` and time-major targets ``{v}_h{t}``.

    Target column t*N + k holds variate k at horizon step t+1.
    """
    values = np.asarray(series, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    length, n_var = values.shape
    if lookback < 1 or horizon < 1:
        raise DomainError(f"lookback and horizon must be >= 1, got {lookback}, {horizon}")
    rows = length - lookback - horizon + 1
    if rows < 1:
        raise DataError(f"series of length {length} is too short for lookback {lookback} + horizon {horizon}")
    labels = list(names) if names is not None else [f"v{k}" for k in range(n_var)]
    if len(labels) != n_var:
        raise DataError(f"{len(labels)} names for {n_var} variates")

    starts = np.arange(rows)
    columns: dict[str, npt.ArrayLike] = {}
    schema_cols: list[Column] = []
    for k, label in enumerate(labels):
        for lag in range(lookback, 0, -1):
            name = f"{label}_lag{lag}"
            columns[name] = values[starts + lookback - lag, k]
            schema_cols.append(Column(name, ColumnKind.NUMERIC))
    for step in range(horizon):
        for k, label in enumerate(labels):
            name = f"{label}_h{step + 1}"
            columns[name] = values[starts + lookback + step, k]
            schema_cols.append(Column(name, ColumnKind.TARGET))
    return from_arrays(Schema(tuple(schema_cols)), columns)
