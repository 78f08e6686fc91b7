"""Evaluation metrics: error, rank correlation and uncertainty diagnostics."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass

import numpy as np
import numpy.typing as npt
from scipy import stats

from .errors import DomainError, ShapeError

# Above this length kendall_tau switches from the exhaustive pair count to scipy's O(n log n) routine.
EXHAUSTIVE_TAU_LIMIT = 10_000
_TAU_BLOCK = 1024


def _pair(a: npt.ArrayLike, b: npt.ArrayLike, what: str) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"{what}: shapes {x.shape} and {y.shape} differ")
    return x, y


def mse(pred: npt.ArrayLike, target: npt.ArrayLike) -> float:
    p, y = _pair(pred, target, "mse")
    if p.size == 0:
        raise DomainError("mse of an empty set is undefined")
    return float(np.mean((p - y) ** 2))


def mae(pred: npt.ArrayLike, target: npt.ArrayLike) -> float:
    p, y = _pair(pred, target, "mae")
    if p.size == 0:
        raise DomainError("mae of an empty set is undefined")
    return float(np.mean(np.abs(p - y)))


def _tau_counts(a: np.ndarray, b: np.ndarray) -> tuple[int, int, int, int]:
    """(concordant, discordant, tied-in-a, tied-in-b) over pairs i < j."""
    n = a.size
    concordant = discordant = tied_a = tied_b = 0
    cols = np.arange(n)
    for start in range(0, n, _TAU_BLOCK):
        stop = min(n, start + _TAU_BLOCK)
        upper = np.arange(start, stop)[:, None] < cols[None, :]
        da = np.sign(a[start:stop, None] - a[None, :])
        db = np.sign(b[start:stop, None] - b[None, :])
        prod = da * db
        concordant += int(np.count_nonzero((prod > 0) & upper))
        discordant += int(np.count_nonzero((prod < 0) & upper))
        tied_a += int(np.count_nonzero((da == 0) & upper))
        tied_b += int(np.count_nonzero((db == 0) & upper))
    return concordant, discordant, tied_a, tied_b


def kendall_tau(a: npt.ArrayLike, b: npt.ArrayLike) -> float:
    """Kendall's tau-b (tie-corrected)."""
    x, y = _pair(a, b, "kendall_tau")
    x, y = x.reshape(-1), y.reshape(-1)
    n = x.size
    if n < 2:
        raise DomainError(f"kendall_tau needs at least 2 values, got {n}")
    if n > EXHAUSTIVE_TAU_LIMIT:
        tau = float(stats.kendalltau(x, y, variant="b").statistic)
        if not math.isfinite(tau):
            raise DomainError("kendall_tau is undefined: one input is constant")
        return tau

    concordant, discordant, tied_a, tied_b = _tau_counts(x, y)
    total = n * (n - 1) // 2
    if tied_a == total or tied_b == total:
        raise DomainError(f"kendall_tau is undefined: all pairs tied (ties {tied_a}, {tied_b} of {total})")
    return (concordant - discordant) / math.sqrt((total - tied_a) * (total - tied_b))


def spearman(a: npt.ArrayLike, b: npt.ArrayLike) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(a, b, "spearman")
    x, y = x.reshape(-1), y.reshape(-1)
    if x.size < 2:
        raise DomainError(f"spearman needs at least 2 values, got {x.size}")
    rx = stats.rankdata(x) - (x.size + 1) / 2.0
    ry = stats.rankdata(y) - (y.size + 1) / 2.0
    denom = math.sqrt(float(np.dot(rx, rx)) * float(np.dot(ry, ry)))
    if denom == 0.0:
        raise DomainError("spearman is undefined: one input is constant")
    return float(np.dot(rx, ry)) / denom


def weighted_r2(pred: npt.ArrayLike, target: npt.ArrayLike, weights: npt.ArrayLike) -> float:
    """1 - sum w (y - p)^2 / sum w y^2 (zero-mean benchmark)."""
    p, y = _pair(pred, target, "weighted_r2")
    w = np.asarray(weights, dtype=np.float64)
    if p.ndim == 2 and w.ndim == 1:
        w = np.broadcast_to(w[:, None], p.shape)
    if w.shape != p.shape:
        raise ShapeError(f"weighted_r2: weight shape {w.shape} does not match {p.shape}")
    if np.any(w < 0.0):
        raise DomainError("weighted_r2: weights must be non-negative")
    denom = float(np.sum(w * y**2))
    if denom == 0.0:
        raise DomainError("weighted_r2 is undefined: weighted target energy is zero")
    return 1.0 - float(np.sum(w * (y - p) ** 2)) / denom


def relative_improvement(baseline: float, candidate: float) -> float:
    """(baseline - candidate) / baseline for lower-is-better scores."""
    if baseline == 0.0:
        if candidate == 0.0:
            return 0.0
        raise DomainError("relative improvement over a zero baseline is undefined")
    return (baseline - candidate) / baseline


@dataclass(frozen=True)
class MetricReport:
    mse: float
    mae: float
    kendall_tau: float | None
    weighted_r2: float | None = None
    spearman_sigma_error: float | None = None

    def __post_init__(self) -> None:
        if self.mse < 0.0 or self.mae < 0.0:
            raise DomainError(f"negative error metric: mse={self.mse!r} mae={self.mae!r}")
        if self.kendall_tau is not None and abs(self.kendall_tau) > 1.0 + 1e-12:
            raise DomainError(f"kendall tau out of range: {self.kendall_tau!r}")

    def to_json(self) -> dict[str, float | None]:
        return asdict(self)

    @classmethod
    def from_json(cls, data: Mapping[str, float | None]) -> MetricReport:
        return cls(**{k: data.get(k) for k in ("mse", "mae", "kendall_tau", "weighted_r2", "spearman_sigma_error")})


def report(
    pred: npt.ArrayLike,
    target: npt.ArrayLike,
    weights: npt.ArrayLike | None = None,
    sigma: npt.ArrayLike | None = None,
) -> MetricReport:
    """Metrics over an (n, d_t) prediction block.

    Kendall's tau is averaged over target columns where it is defined; the
    sigma/error Spearman correlation is reported when *sigma* is given and
    neither side is constant.
    """
    p, y = _pair(pred, target, "report")
    if p.ndim == 1:
        p, y = p[:, None], y[:, None]
    taus = []
    for k in range(p.shape[1]):
        try:
            taus.append(kendall_tau(p[:, k], y[:, k]))
        except DomainError:
            continue
    r2 = None if weights is None else weighted_r2(p, y, weights)
    rho = None
    if sigma is not None:
        s = np.asarray(sigma, dtype=np.float64).reshape(p.shape)
        try:
            rho = spearman(s.reshape(-1), np.abs(p - y).reshape(-1))
        except DomainError:
            rho = None
    return MetricReport(
        mse=mse(p, y),
        mae=mae(p, y),
        kendall_tau=float(np.mean(taus)) if taus else None,
        weighted_r2=r2,
        spearman_sigma_error=rho,
    )


def uncertainty_error_bins(sigma: npt.ArrayLike, abs_error: npt.ArrayLike, bins: int = 10) -> list[dict[str, float]]:
    """Equal-count groups by predicted sigma with the error distribution of each.

    Rows are ordered from the most to the least confident group and carry
    the sigma range plus the quartiles of the absolute error.
    """
    s, e = _pair(sigma, abs_error, "uncertainty_error_bins")
    s, e = s.reshape(-1), e.reshape(-1)
    if bins < 1:
        raise DomainError(f"need at least one bin, got {bins}")
    if s.size < bins:
        raise DomainError(f"{s.size} values cannot fill {bins} bins")
    order = np.argsort(s, kind="stable")
    rows = []
    for k, idx in enumerate(np.array_split(order, bins)):
        q1, median, q3 = np.quantile(e[idx], [0.25, 0.5, 0.75])
        rows.append(
            {
                "bin": k,
                "count": int(idx.size),
                "sigma_min": float(s[idx].min()),
                "sigma_max": float(s[idx].max()),
                "mean_abs_error": float(e[idx].mean()),
                "q1": float(q1),
                "median": float(median),
                "q3": float(q3),
            }
        )
    return rows
