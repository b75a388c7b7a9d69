"""Model, data and run lifecycle enums."""

from enum import StrEnum


class Variant(StrEnum):
    """Diffusion model family."""

    DIFFNETPP = "diffnetpp"
    DIFFNET = "diffnet"
    BPR = "bpr"


class AttentionMode(StrEnum):
    """How neighbor (or graph) contributions are weighted."""

    AVG = "avg"
    ATT = "att"


class GammaInput(StrEnum):
    """Which aggregates feed the graph-level attention scorer."""

    CURRENT = "current"
    PREVIOUS = "previous"


class Readout(StrEnum):
    """How per-layer representations are combined for scoring."""

    CONCAT = "concat"
    LAST = "last"


class Activation(StrEnum):
    """Hidden activation of the attention perceptrons."""

    LEAKY_RELU = "leaky_relu"
    TANH = "tanh"
    IDENTITY = "identity"


class Precision(StrEnum):
    """Floating point width used for training arrays."""

    FLOAT64 = "float64"
    FLOAT32 = "float32"


class SplitMode(StrEnum):
    """Test/validation split strategy."""

    GLOBAL = "global"
    PER_USER = "per_user"


class StopReason(StrEnum):
    """Why a training run ended."""

    PATIENCE = "patience"
    MAX_EPOCHS = "max_epochs"


class RunStatus(StrEnum):
    """Experiment run lifecycle status."""

    NEW = "new"
    PREPROCESSED = "preprocessed"
    TRAINING = "training"
    TRAINED = "trained"
    EVALUATED = "evaluated"
    FAILED = "failed"
