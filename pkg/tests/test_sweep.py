"""
Tests for sweep planning and table assembly, without training.
"""

import pytest

from adaprl.config import parse_run_config
from adaprl.sweep import ADAPRL_ARM, BASELINE_ARM, assemble, plan
from helpers import synthetic_config


def _config(**sweep):
    return parse_run_config(synthetic_config(alpha=0.2, sweep=sweep), ".", {})


def _outcome(mse, valid_mse=None):
    return {
        "status": "ok",
        "mse": mse,
        "valid_mse": valid_mse,
        "mae": mse,
        "kendall_tau": None,
        "weighted_r2": None,
        "spearman_sigma_error": None,
    }


class TestPlan:
    def test_alpha_grid_shares_one_baseline_per_repeat(self):
        config = _config(kind="alpha", values=[0.1, 0.2, 0.5], repeats=2)
        cells = plan(config, config.sweep)
        assert len(cells) == 12
        baselines = {(c.repeat, c.key) for c in cells if c.arm == BASELINE_ARM}
        assert len(baselines) == 2

    def test_noise_levels_get_their_own_baseline(self):
        config = _config(kind="noise", values=[0, 2], repeats=1)
        keys = {c.key for c in plan(config, config.sweep) if c.arm == BASELINE_ARM}
        assert sorted(k.level for k in keys) == [0.0, 2.0]

    def test_alpha_candidates_widen_the_adaprl_arm_only(self):
        config = _config(kind="noise", values=[1], repeats=2, alphas=[0.05, 0.1, 0.5])
        cells = plan(config, config.sweep)
        adaprl = [c for c in cells if c.arm == ADAPRL_ARM]
        assert [sorted(k.alpha for k in c.runs) for c in adaprl] == [[0.05, 0.1, 0.5]] * 2
        assert all(len(c.runs) == 1 for c in cells if c.arm == BASELINE_ARM)


class TestAssemble:
    def test_zero_baseline_mse_leaves_improvement_empty(self):
        config = _config(kind="noise", values=[0], repeats=1)
        cells = plan(config, config.sweep)
        outcomes = {c.key: _outcome(0.0 if c.arm == BASELINE_ARM else 0.5) for c in cells}
        result = assemble(config.sweep, cells, outcomes)
        assert [r["improvement"] for r in result.detail] == [None, 0.0]
        assert result.aggregate[0]["improvement"] is None
        assert result.exit_code == 0

    def test_improvement_is_relative_to_matched_baseline(self):
        config = _config(kind="noise", values=[0], repeats=2)
        cells = plan(config, config.sweep)
        mses = {(0, "adaprl"): 0.8, (0, "baseline"): 1.0, (1, "adaprl"): 0.9, (1, "baseline"): 0.6}
        outcomes = {c.key: _outcome(mses[(c.repeat, c.arm)]) for c in cells}
        result = assemble(config.sweep, cells, outcomes)
        gains = [r["improvement"] for r in result.detail if r["arm"] == "adaprl"]
        assert gains == pytest.approx([0.2, -0.5])
        assert result.aggregate[0]["improvement"] == pytest.approx(-0.15)
        assert result.aggregate[0]["adaprl_mse"] == pytest.approx(0.85)

    def test_candidate_with_lowest_valid_mse_is_reported(self):
        config = _config(kind="noise", values=[1], repeats=1, alphas=[0.05, 0.1, 0.5])
        cells = plan(config, config.sweep)
        valid = {0.05: 0.7, 0.1: 0.4, 0.5: 0.9, 0.0: 0.8}
        test = {0.05: 0.5, 0.1: 0.6, 0.5: 0.3, 0.0: 1.0}
        outcomes = {k: _outcome(test[k.alpha], valid[k.alpha]) for c in cells for k in c.runs}
        result = assemble(config.sweep, cells, outcomes)
        row = next(r for r in result.detail if r["arm"] == ADAPRL_ARM)
        assert row["alpha"] == 0.1
        assert row["mse"] == 0.6
        assert row["improvement"] == pytest.approx(0.4)

    def test_failed_candidate_is_reported_but_not_selected(self):
        config = _config(kind="noise", values=[1], repeats=1, alphas=[0.1, 0.5])
        cells = plan(config, config.sweep)
        outcomes = {k: _outcome(0.5, 0.5) for c in cells for k in c.runs}
        failed = next(k for c in cells for k in c.runs if k.alpha == 0.1)
        outcomes[failed] = {"status": "failed: non-finite value", "numerical": True}
        result = assemble(config.sweep, cells, outcomes)
        row = next(r for r in result.detail if r["arm"] == ADAPRL_ARM)
        assert row["alpha"] == 0.5 and row["status"] == "ok"
        assert result.failures == [f"{failed.slug}: failed: non-finite value"]
        assert result.exit_code == 3
