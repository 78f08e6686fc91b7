"""Uncertainty-aware pairwise ranking regression on a small reverse-mode autodiff core."""

from .errors import AdaprlError, ConfigError, DataError, DomainError, NonFiniteError, NumericalError, ShapeError
from .gradcore import Graph, Node, Primitive, grad_check
from .losses import LossSpec, PairMode, PairType, RegKind, adaprl_loss
from .metrics import MetricReport
from .model import MlpConfig, ModelPair, init
from .train import TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "AdaprlError",
    "ConfigError",
    "DataError",
    "DomainError",
    "Graph",
    "LossSpec",
    "MetricReport",
    "MlpConfig",
    "ModelPair",
    "Node",
    "NonFiniteError",
    "NumericalError",
    "PairMode",
    "PairType",
    "Primitive",
    "RegKind",
    "ShapeError",
    "TrainConfig",
    "adaprl_loss",
    "evaluate",
    "fit",
    "grad_check",
    "init",
]
