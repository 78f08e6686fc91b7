"""
Tests for evaluation metrics and the uncertainty diagnostics table.
"""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from adaprl.errors import DomainError, ShapeError
from adaprl.gradcore import Graph
from adaprl.losses import RegKind, pointwise_loss
from adaprl.metrics import (
    EXHAUSTIVE_TAU_LIMIT,
    MetricReport,
    kendall_tau,
    mae,
    mse,
    relative_improvement,
    report,
    spearman,
    uncertainty_error_bins,
    weighted_r2,
)
from helpers import naive_kendall

# ---------------------------------------------------------------------------
# Kendall's tau
# ---------------------------------------------------------------------------


class TestKendall:
    @pytest.mark.parametrize(
        "a, b, expected",
        [
            ([1, 2, 3], [3, 2, 1], -1.0),
            ([4, 1, 7, 2], [4, 1, 7, 2], 1.0),
            ([1, 2, 3], [1, 3, 2], 1 / 3),
        ],
    )
    def test_examples(self, a, b, expected):
        assert kendall_tau(a, b) == pytest.approx(expected, abs=1e-15)

    def test_matches_exhaustive_count_with_ties(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 51))
            a = rng.integers(0, 6, size=n).astype(float)
            b = rng.integers(0, 6, size=n).astype(float)
            if np.all(a == a[0]) or np.all(b == b[0]):
                continue
            assert kendall_tau(a, b) == pytest.approx(naive_kendall(a.tolist(), b.tolist()), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=3, max_size=30))
    def test_symmetric_and_rank_invariant(self, pairs):
        a = np.array([p[0] for p in pairs], dtype=float)
        b = np.array([p[1] for p in pairs], dtype=float)
        if np.all(a == a[0]) or np.all(b == b[0]):
            return
        tau = kendall_tau(a, b)
        assert kendall_tau(b, a) == pytest.approx(tau, abs=1e-12)
        assert kendall_tau(np.exp(a / 10.0), b**3) == pytest.approx(tau, abs=1e-12)

    def test_large_input_uses_library_routine(self, rng):
        n = EXHAUSTIVE_TAU_LIMIT + 1
        a = rng.normal(size=n)
        b = a + rng.normal(size=n)
        assert kendall_tau(a, b) == pytest.approx(stats.kendalltau(a, b).statistic, abs=1e-12)

    def test_rejects_short_and_tied(self):
        with pytest.raises(DomainError, match="at least 2"):
            kendall_tau([1.0], [2.0])
        with pytest.raises(DomainError, match="tied"):
            kendall_tau([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ShapeError):
            kendall_tau([1.0, 2.0], [1.0, 2.0, 3.0])


# ---------------------------------------------------------------------------
# Spearman
# ---------------------------------------------------------------------------


class TestSpearman:
    def test_examples(self):
        a = np.array([0.5, 1.0, 2.0, 3.5])
        assert spearman(a, a**2) == pytest.approx(1.0, abs=1e-15)
        assert spearman(a, -a) == pytest.approx(-1.0, abs=1e-15)
        assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)

    def test_ties_use_average_ranks(self):
        # ranks [1.5, 1.5, 3] vs [1, 2, 3]
        assert spearman([1, 1, 2], [1, 2, 3]) == pytest.approx(math.sqrt(3) / 2, abs=1e-12)

    def test_rejects_constant(self):
        with pytest.raises(DomainError, match="constant"):
            spearman([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


# ---------------------------------------------------------------------------
# Errors and weighted R^2
# ---------------------------------------------------------------------------


class TestErrors:
    def test_mse_mae_agree_with_pointwise_losses(self, rng):
        pred, target = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
        g = Graph()
        assert mse(pred, target) == pytest.approx(float(pointwise_loss(g.leaf(pred), target).value), abs=1e-15)
        assert mae(pred, target) == pytest.approx(
            float(pointwise_loss(g.leaf(pred), target, RegKind.L1).value), abs=1e-15
        )

    def test_weighted_r2_identities(self, rng):
        y = rng.normal(size=20)
        w = rng.uniform(0.1, 3.0, size=20)
        assert weighted_r2(y, y, w) == 1.0
        assert weighted_r2(np.zeros(20), y, w) == 0.0
        assert weighted_r2([0.0, 0.0], [1.0, -1.0], [1.0, 1.0]) == 0.0

    def test_weighted_r2_split_record(self):
        pred, target, w = [0.5, 2.0, -1.0], [1.0, 1.5, -0.5], [2.0, 1.0, 4.0]
        split = weighted_r2([0.5, 0.5, 2.0, -1.0], [1.0, 1.0, 1.5, -0.5], [0.5, 1.5, 1.0, 4.0])
        assert split == pytest.approx(weighted_r2(pred, target, w), abs=1e-15)

    def test_weighted_r2_broadcasts_row_weights(self):
        pred = np.array([[1.0, 2.0], [0.0, 1.0]])
        target = np.array([[1.0, 1.0], [1.0, 1.0]])
        w = np.array([1.0, 3.0])
        assert weighted_r2(pred, target, w) == pytest.approx(1.0 - (1.0 + 3.0) / 8.0)

    def test_weighted_r2_rejections(self):
        with pytest.raises(DomainError):
            weighted_r2([1.0], [1.0], [0.0])
        with pytest.raises(DomainError):
            weighted_r2([1.0], [0.0], [1.0])
        with pytest.raises(DomainError):
            weighted_r2([1.0], [1.0], [-1.0])

    def test_relative_improvement(self):
        assert relative_improvement(2.0, 1.5) == 0.25
        assert relative_improvement(1.0, 1.0) == 0.0
        assert relative_improvement(0.0, 0.0) == 0.0
        with pytest.raises(DomainError):
            relative_improvement(0.0, 1.0)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            mse([], [])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class TestReport:
    def test_json_round_trip(self, rng):
        pred, target = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
        sigma = rng.uniform(0.1, 1.0, size=(30, 2))
        original = report(pred, target, weights=rng.uniform(size=30), sigma=sigma)
        restored = MetricReport.from_json(json.loads(json.dumps(original.to_json())))
        assert restored == original

    def test_tau_skips_constant_columns(self, rng):
        target = np.column_stack([rng.normal(size=10), np.ones(10)])
        pred = target + rng.normal(scale=0.1, size=(10, 2))
        result = report(pred, target)
        assert result.kendall_tau == pytest.approx(kendall_tau(pred[:, 0], target[:, 0]))

    def test_undefined_tau_is_none(self):
        result = report(np.ones((4, 1)), np.ones((4, 1)))
        assert result.kendall_tau is None and result.mse == 0.0
        assert result.to_json()["kendall_tau"] is None

    def test_sigma_correlation(self):
        target = np.zeros(6)
        pred = np.array([0.1, -0.2, 0.3, -0.4, 0.5, -0.6])
        sigma = np.arange(1.0, 7.0)
        assert report(pred, target, sigma=sigma).spearman_sigma_error == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Uncertainty bins
# ---------------------------------------------------------------------------


class TestUncertaintyBins:
    def test_equal_count_groups_in_sigma_order(self, rng):
        sigma = rng.uniform(0.1, 1.0, size=103)
        errors = sigma * np.abs(rng.normal(size=103))
        rows = uncertainty_error_bins(sigma, errors, bins=10)
        assert [r["bin"] for r in rows] == list(range(10))
        assert sum(r["count"] for r in rows) == 103
        assert max(r["count"] for r in rows) - min(r["count"] for r in rows) <= 1
        for prev, cur in zip(rows, rows[1:], strict=False):
            assert prev["sigma_max"] <= cur["sigma_min"]
        for r in rows:
            assert r["q1"] <= r["median"] <= r["q3"]

    def test_too_few_values(self):
        with pytest.raises(DomainError):
            uncertainty_error_bins([1.0, 2.0], [0.1, 0.2], bins=3)
