"""
Shared helpers for the adaprl test-suite.

Sub-modules:
    constants - project paths and tolerances
    configs   - run-config builders and file writers
    oracles   - loop-based loss/metric references and a point-wise-only trainer
    process   - run the command line in a subprocess
"""

# Re-export everything so ``from helpers import X`` keeps working.

from .configs import csv_config, synthetic_config, write_config, write_text
from .constants import GRAD_RTOL, ORACLE_ATOL, PROJECT_ROOT
from .oracles import (
    naive_all_cells,
    naive_confidence,
    naive_cprl,
    naive_kendall,
    naive_mcprl,
    naive_mtcprl,
    naive_prl,
    naive_scprl,
    pointwise_trace,
)
from .process import run_cli, run_dirs, run_tool

__all__ = [
    "GRAD_RTOL",
    "ORACLE_ATOL",
    "PROJECT_ROOT",
    "csv_config",
    "naive_all_cells",
    "naive_confidence",
    "naive_cprl",
    "naive_kendall",
    "naive_mcprl",
    "naive_mtcprl",
    "naive_prl",
    "naive_scprl",
    "pointwise_trace",
    "run_cli",
    "run_dirs",
    "run_tool",
    "synthetic_config",
    "write_config",
    "write_text",
]
