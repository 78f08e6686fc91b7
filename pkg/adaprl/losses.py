"""
Point-wise, pairwise-ranking and likelihood losses.

Every pairwise variant works on a (K, n) view of predictions: K independent
groups (variates) of n samples each. Single-target ranking is K = 1, the
multi-target form is K = d_t, and the time-series form regroups a
(B, T, N) block so each variate contributes one vector of length B*T. The
pair weight for (i, j) in group k is ``C[k, i, j] * M[k, i, j]`` where M is
the hinge mask ``y_i - y_j > theta`` and C the inverse min-max scaled
uncertainty sum. The sum is normalised by the number of active pairs D; an
empty mask gives exactly 0.

Uncertainties enter as constants: they are read from detached values, so
the auxiliary network never receives gradient from a pairwise term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import numpy.typing as npt

from .data import SEED_MASK
from .errors import DomainError, ShapeError
from .gradcore import (
    Node,
    Tensor,
    absolute,
    clamp,
    detach,
    log,
    masked_weighted_sum,
    outer_diff,
    reduce_mean,
    sqrt,
    square,
    take,
)

logger = logging.getLogger(__name__)


class PairType(StrEnum):
    MAE = "mae"
    RMSE = "rmse"


class RegKind(StrEnum):
    L2 = "l2"
    L1 = "l1"
    HUBER = "huber"


class PairMode(StrEnum):
    SINGLE = "single"
    MULTI_TASK = "multi-task"
    TIME_SERIES = "time-series"


@dataclass(frozen=True)
class LossSpec:
    alpha: float = 0.0
    theta: float = 0.0
    pair_type: PairType = PairType.MAE
    reg_kind: RegKind = RegKind.L2
    huber_delta: float = 1.0
    mode: PairMode = PairMode.SINGLE
    keep_fraction: float = 1.0
    horizon: int = 1

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha!r}")
        if self.theta < 0.0:
            raise DomainError(f"theta must be >= 0, got {self.theta!r}")
        if self.huber_delta <= 0.0:
            raise DomainError(f"huber_delta must be > 0, got {self.huber_delta!r}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise DomainError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction!r}")
        if self.horizon < 1:
            raise DomainError(f"horizon must be >= 1, got {self.horizon}")
        if self.horizon > 1 and self.mode is not PairMode.TIME_SERIES:
            raise DomainError(f"horizon {self.horizon} requires mode {PairMode.TIME_SERIES.value!r}")


def _check_pair(pred: Node, target: np.ndarray, what: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{what}: prediction shape {pred.shape} does not match target shape {target.shape}")


# ---------------------------------------------------------------------------
# Point-wise
# ---------------------------------------------------------------------------


def pointwise_loss(pred: Node, target: npt.ArrayLike, kind: RegKind = RegKind.L2, delta: float = 1.0) -> Node:
    """Mean of the per-entry L2, L1 or Huber penalty."""
    y = np.asarray(target, dtype=np.float64)
    _check_pair(pred, y, "pointwise_loss")
    if y.size == 0:
        raise DomainError("pointwise_loss: empty batch")
    residual = pred - y
    match RegKind(kind):
        case RegKind.L2:
            return reduce_mean(square(residual))
        case RegKind.L1:
            return reduce_mean(absolute(residual))
        case RegKind.HUBER:
            if delta <= 0.0:
                raise DomainError(f"huber delta must be > 0, got {delta!r}")
            a = absolute(residual)
            c = clamp(a, 0.0, delta)
            return reduce_mean(square(c) * 0.5 + (a - c) * delta)


# ---------------------------------------------------------------------------
# Pairwise building blocks (numpy constants)
# ---------------------------------------------------------------------------


def hinge_mask(target: npt.ArrayLike, theta: float) -> npt.NDArray[np.bool_]:
    """M[..., i, j] = y_i - y_j > theta over the last axis."""
    if theta < 0.0:
        raise DomainError(f"theta must be >= 0, got {theta!r}")
    y = np.asarray(target, dtype=np.float64)
    return (y[..., :, None] - y[..., None, :]) > theta


def uncertainty_matrix(sigma2: npt.ArrayLike) -> Tensor:
    """U[..., i, j] = sigma2_i + sigma2_j over the last axis."""
    s = np.asarray(sigma2, dtype=np.float64)
    return s[..., :, None] + s[..., None, :]


def _inverse_min_max(u: Tensor, lo: Tensor, hi: Tensor) -> Tensor:
    span = hi - lo
    degenerate = span <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = 2.0 * (hi - u) / np.where(degenerate, 1.0, span)
    return np.where(degenerate, 1.0, scaled)


def confidence_matrix(uncertainty: npt.ArrayLike) -> Tensor:
    """C = 2 * (max U - U) / (max U - min U), per trailing (n, n) block.

    Extremes include the diagonal. A constant U gives C == 1 everywhere.
    """
    u = np.asarray(uncertainty, dtype=np.float64)
    lo = u.min(axis=(-2, -1), keepdims=True)
    hi = u.max(axis=(-2, -1), keepdims=True)
    return _inverse_min_max(u, lo, hi)


def _headroom(sigma2: Tensor) -> Tensor:
    """h = (max s - s) / (max s - min s) over the last axis, 0.5 where s is constant.

    The extremes of U = s_i + s_j are twice the extremes of s, so
    ``confidence_matrix(uncertainty_matrix(s))[..., i, j] == h_i + h_j``.
    """
    lo = sigma2.min(axis=-1, keepdims=True)
    hi = sigma2.max(axis=-1, keepdims=True)
    span = hi - lo
    degenerate = span <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = (hi - sigma2) / np.where(degenerate, 1.0, span)
    return np.where(degenerate, 0.5, scaled)


def confidence_for_pairs(sigma2: npt.ArrayLike, i: npt.ArrayLike, j: npt.ArrayLike) -> Tensor:
    """Confidences of the pairs (i, j) of every row of a (K, n) variance view.

    Equals ``confidence_matrix(uncertainty_matrix(sigma2))[:, i, j]``
    without building the n x n matrix.
    """
    h = _headroom(np.asarray(sigma2, dtype=np.float64))
    return h[:, i] + h[:, j]


@dataclass(frozen=True)
class PairwiseContext:
    """Hinge mask M, per-row headroom h (C[i, j] = h_i + h_j) and active-pair count D."""

    mask: npt.NDArray[np.bool_]
    headroom: Tensor | None
    count: int

    @property
    def confidence(self) -> Tensor:
        if self.headroom is None:
            return np.ones(self.mask.shape)
        h = self.headroom
        return h[..., :, None] + h[..., None, :]

    @property
    def weights(self) -> Tensor:
        if self.headroom is None:
            return self.mask.astype(np.float64)
        return np.where(self.mask, self.confidence, 0.0)


def pairwise_context(target: npt.ArrayLike, sigma2: npt.ArrayLike | None, theta: float) -> PairwiseContext:
    """Hinge mask, confidences and active-pair count for a (..., n) view."""
    y = np.asarray(target, dtype=np.float64)
    mask = hinge_mask(y, theta)
    headroom = None
    if sigma2 is not None:
        s = np.asarray(sigma2, dtype=np.float64)
        if s.shape != y.shape:
            raise ShapeError(f"variance shape {s.shape} does not match target shape {y.shape}")
        if np.any(s <= 0.0):
            raise DomainError("variances must be strictly positive")
        headroom = _headroom(s)
    return PairwiseContext(mask=mask, headroom=headroom, count=int(np.count_nonzero(mask)))


def _constant(values: Node | npt.ArrayLike) -> Tensor:
    if isinstance(values, Node):
        return detach(values).value
    return np.asarray(values, dtype=np.float64)


def _reduce_pairs(
    residual: Node, confidence: Tensor | float, mask: npt.NDArray[np.bool_], count: int, pair_type: PairType
) -> Node:
    match PairType(pair_type):
        case PairType.MAE:
            return masked_weighted_sum(absolute(residual), confidence, mask) / count
        case PairType.RMSE:
            return sqrt(masked_weighted_sum(square(residual), confidence, mask) / count)


def _dense_pairs(view: Node, target: Tensor, ctx: PairwiseContext, pair_type: PairType) -> Node:
    if ctx.count == 0:
        return view.graph.constant(0.0)
    # (p_i - p_j) - (y_i - y_j) == r_i - r_j with r = p - y
    residual = outer_diff(view - target)
    confidence = 1.0 if ctx.headroom is None else ctx.confidence
    return _reduce_pairs(residual, confidence, ctx.mask, ctx.count, pair_type)


# ---------------------------------------------------------------------------
# Single-target
# ---------------------------------------------------------------------------


def prl_loss(pred: Node, target: npt.ArrayLike, theta: float = 0.0, pair_type: PairType = PairType.MAE) -> Node:
    """Unweighted pairwise ranking loss on one prediction vector of shape (n,)."""
    y = np.asarray(target, dtype=np.float64)
    _check_pair(pred, y, "prl_loss")
    if y.ndim != 1:
        raise ShapeError(f"prl_loss: expected a vector, got shape {y.shape}")
    return _dense_pairs(pred, y, pairwise_context(y, None, theta), pair_type)


def cprl_loss(
    pred: Node,
    target: npt.ArrayLike,
    sigma2: Node | npt.ArrayLike,
    theta: float = 0.0,
    pair_type: PairType = PairType.MAE,
) -> Node:
    """Confidence-weighted pairwise ranking loss on a vector of shape (n,)."""
    y = np.asarray(target, dtype=np.float64)
    _check_pair(pred, y, "cprl_loss")
    if y.ndim != 1:
        raise ShapeError(f"cprl_loss: expected a vector, got shape {y.shape}")
    return _dense_pairs(pred, y, pairwise_context(y, _constant(sigma2), theta), pair_type)


# ---------------------------------------------------------------------------
# Grouped views
# ---------------------------------------------------------------------------


def _layout(shape: tuple[int, ...], horizon: int) -> tuple[int, int, int]:
    """(B, T, N) for a prediction of shape (B, T*N) or (B, T, N)."""
    if len(shape) == 3:
        return shape[0], shape[1], shape[2]
    if len(shape) != 2:
        raise ShapeError(f"expected a (B, T*N) or (B, T, N) block, got shape {shape}")
    rows, width = shape
    if width % horizon:
        raise ShapeError(f"{width} target columns are not divisible by horizon {horizon}")
    return rows, horizon, width // horizon


def _view_indices(rows: int, steps: int, variates: int) -> npt.NDArray[np.intp]:
    """idx[k, b*T + t] = flat position of (b, t, k) in a row-major (B, T, N) block."""
    b = np.arange(rows)[:, None] * (steps * variates)
    t = np.arange(steps)[None, :] * variates
    base = (b + t).reshape(-1)
    return base[None, :] + np.arange(variates)[:, None]


def variate_view(values: npt.ArrayLike, horizon: int = 1) -> Tensor:
    """Regroup a (B, T*N) or (B, T, N) array into (N, B*T)."""
    arr = np.asarray(values, dtype=np.float64)
    rows, steps, variates = _layout(arr.shape, horizon)
    return arr.reshape(-1)[_view_indices(rows, steps, variates)]


def _grouped_inputs(
    pred: Node, target: npt.ArrayLike, sigma2: Node | npt.ArrayLike, horizon: int, what: str
) -> tuple[Node, Tensor, Tensor, npt.NDArray[np.intp]]:
    y = np.asarray(target, dtype=np.float64)
    _check_pair(pred, y, what)
    s = _constant(sigma2)
    if s.shape != y.shape:
        raise ShapeError(f"{what}: variance shape {s.shape} does not match target shape {y.shape}")
    idx = _view_indices(*_layout(y.shape, horizon))
    return take(pred, idx), y.reshape(-1)[idx], s.reshape(-1)[idx], idx


def mcprl_loss(
    pred: Node, target: npt.ArrayLike, sigma2: Node | npt.ArrayLike, spec: LossSpec | None = None
) -> Node:
    """Multi-target form: per-target confidence and mask, one shared count D."""
    spec = spec or LossSpec(mode=PairMode.MULTI_TASK)
    view, y, s, _ = _grouped_inputs(pred, target, sigma2, 1, "mcprl_loss")
    return _dense_pairs(view, y, pairwise_context(y, s, spec.theta), spec.pair_type)


def mtcprl_loss(
    pred: Node, target: npt.ArrayLike, sigma2: Node | npt.ArrayLike, spec: LossSpec | None = None
) -> Node:
    """Time-series form over a (B, T, N) block (or (B, T*N), time-major columns).

    Every variate ranks all of its B*T (sample, step) cells against each other.
    """
    spec = spec or LossSpec(mode=PairMode.TIME_SERIES)
    view, y, s, _ = _grouped_inputs(pred, target, sigma2, spec.horizon, "mtcprl_loss")
    return _dense_pairs(view, y, pairwise_context(y, s, spec.theta), spec.pair_type)


def sample_pair_positions(rng: np.random.Generator, total: int, keep: float) -> npt.NDArray[np.int64]:
    """Sorted positions in [0, total) each kept independently with probability *keep*.

    Gaps between kept positions are geometric, so the cost is proportional
    to the number of kept pairs rather than to *total*.
    """
    if keep >= 1.0:
        return np.arange(total, dtype=np.int64)
    expected = total * keep
    positions: list[np.ndarray] = []
    cursor = -1
    while True:
        draw = max(16, int(expected + 6.0 * np.sqrt(expected + 1.0)))
        steps = rng.geometric(keep, size=draw)
        pos = cursor + np.cumsum(steps)
        inside = pos[pos < total]
        positions.append(inside)
        if inside.size < pos.size:
            break
        cursor = int(pos[-1])
    return np.concatenate(positions).astype(np.int64)


def scprl_loss(
    pred: Node,
    target: npt.ArrayLike,
    sigma2: Node | npt.ArrayLike,
    spec: LossSpec,
    mask_seed: int,
    batch_index: int = 0,
) -> Node:
    """Sparse pairwise loss: a seeded Bernoulli(keep_fraction) subset S of pairs.

    S is drawn over the ordered (B*T)^2 pairs and shared by all variates;
    the count D covers pairs in S with an active hinge mask. keep_fraction
    1.0 is the dense loss.
    """
    if not 0.0 < spec.keep_fraction <= 1.0:
        raise DomainError(f"keep_fraction must lie in (0, 1], got {spec.keep_fraction!r}")
    if spec.keep_fraction == 1.0:
        return mtcprl_loss(pred, target, sigma2, spec)

    horizon = spec.horizon if spec.mode is PairMode.TIME_SERIES else 1
    _, y, s, idx = _grouped_inputs(pred, target, sigma2, horizon, "scprl_loss")
    if np.any(s <= 0.0):
        raise DomainError("variances must be strictly positive")
    n = y.shape[1]
    rng = np.random.default_rng([mask_seed & SEED_MASK, batch_index & SEED_MASK])
    positions = sample_pair_positions(rng, n * n, spec.keep_fraction)
    i, j = positions // n, positions % n

    dy = y[:, i] - y[:, j]
    mask = dy > spec.theta
    count = int(np.count_nonzero(mask))
    if count == 0:
        return pred.graph.constant(0.0)
    residual = take(pred, idx[:, i]) - take(pred, idx[:, j]) - dy
    return _reduce_pairs(residual, confidence_for_pairs(s, i, j), mask, count, spec.pair_type)


# ---------------------------------------------------------------------------
# Likelihood and composition
# ---------------------------------------------------------------------------


def nll_loss(mu: Node, sigma2: Node, target: npt.ArrayLike) -> Node:
    """Mean Gaussian negative log-likelihood without the constant term."""
    y = np.asarray(target, dtype=np.float64)
    _check_pair(mu, y, "nll_loss")
    if mu.shape != sigma2.shape:
        raise ShapeError(f"nll_loss: mean shape {mu.shape} does not match variance shape {sigma2.shape}")
    if y.size == 0:
        raise DomainError("nll_loss: empty batch")
    if np.any(sigma2.value <= 0.0):
        raise DomainError("nll_loss: variances must be strictly positive")
    return reduce_mean(square(mu - y) / (sigma2 * 2.0) + log(sigma2) * 0.5)


def pairwise_loss(
    pred: Node,
    target: npt.ArrayLike,
    sigma2: Node | npt.ArrayLike,
    spec: LossSpec,
    mask_seed: int = 0,
    batch_index: int = 0,
) -> Node:
    """Dispatch to the single-target, multi-target, time-series or sparse form."""
    y = np.asarray(target, dtype=np.float64)
    if spec.mode is PairMode.SINGLE and (y.ndim != 2 or y.shape[1] != 1):
        raise ShapeError(f"single-target mode needs a (B, 1) target, got shape {y.shape}")
    if spec.keep_fraction < 1.0:
        return scprl_loss(pred, y, sigma2, spec, mask_seed, batch_index)
    if spec.mode is PairMode.TIME_SERIES:
        return mtcprl_loss(pred, y, sigma2, spec)
    return mcprl_loss(pred, y, sigma2, spec)


def adaprl_loss(
    pred: Node,
    target: npt.ArrayLike,
    mu: Node,
    sigma2: Node,
    spec: LossSpec,
    *,
    mask_seed: int = 0,
    batch_index: int = 0,
) -> tuple[Node, Node]:
    """(main loss, auxiliary loss).

    main = point-wise + alpha * pairwise, differentiable in the main network
    only; aux = NLL, differentiable in the auxiliary network only. alpha == 0
    skips the pairwise term entirely.
    """
    y = np.asarray(target, dtype=np.float64)
    regression = pointwise_loss(pred, y, spec.reg_kind, spec.huber_delta)
    auxiliary = nll_loss(mu, sigma2, y)
    if spec.alpha == 0.0:
        return regression, auxiliary
    ranking = pairwise_loss(pred, y, sigma2, spec, mask_seed=mask_seed, batch_index=batch_index)
    return regression + ranking * spec.alpha, auxiliary
