"""socialdiff core package."""

__version__ = "0.1.0"

from socialdiff.enums import (
    Activation,
    AttentionMode,
    Readout,
    RunStatus,
    Variant,
)
from socialdiff.evaluation import EvalConfig, RankingReport, evaluate
from socialdiff.exceptions import (
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    InvalidTransitionError,
    NumericError,
    SocialDiffException,
    VariantNotFoundError,
)
from socialdiff.flow import ExperimentFlow, ExperimentRecord
from socialdiff.graph import HeteroGraph, preprocess
from socialdiff.model import DiffusionModel, ModelConfig
from socialdiff.params import ParameterSet
from socialdiff.registry import registry
from socialdiff.sampling import split
from socialdiff.training import TrainConfig, train
from socialdiff.variant import BaseVariant

__all__ = [
    "Activation",
    "AttentionMode",
    "BaseVariant",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DiffusionModel",
    "DivergenceError",
    "EvalConfig",
    "ExperimentFlow",
    "ExperimentRecord",
    "HeteroGraph",
    "InvalidTransitionError",
    "ModelConfig",
    "NumericError",
    "ParameterSet",
    "RankingReport",
    "Readout",
    "RunStatus",
    "SocialDiffException",
    "TrainConfig",
    "Variant",
    "VariantNotFoundError",
    "__version__",
    "evaluate",
    "preprocess",
    "registry",
    "split",
    "train",
]
