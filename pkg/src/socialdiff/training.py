"""Pairwise ranking optimization.

Every batch records a full diffusion over the training graph, scores its
``(user, positive, negative)`` triples and minimizes

    -sum ln sigmoid(r_pos - r_neg) + lambda * ||Theta||^2

with Adam. Validation HR@10 after each epoch selects the parameters that
are returned and drives early stopping.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import anyio.to_thread
import numpy as np
from numpy.typing import NDArray
from tqdm import tqdm

from socialdiff import autodiff as ad
from socialdiff.autodiff import Tape, Tensor
from socialdiff.enums import Precision, StopReason
from socialdiff.evaluation import evaluation_users, metric_name, ranking_table
from socialdiff.exceptions import (
    ConfigError,
    DivergenceError,
    NonFiniteError,
    NumericError,
)
from socialdiff.graph import HeteroGraph, IntArray
from socialdiff.model import DiffusionModel, ModelConfig
from socialdiff.params import GradientBundle, ParameterSet
from socialdiff.protocols import LossFunction
from socialdiff.registry import VariantRegistry
from socialdiff.sampling import (
    InteractionSplit,
    TrainTriples,
    sample_eval_negatives,
    sample_train_negatives,
)
from socialdiff.types import EpochRecord

logger = logging.getLogger(__name__)

Array = NDArray[Any]

VALIDATION_CUTOFF = 10


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 512
    neg_ratio: int = 8
    lambda_reg: float = 0.01
    max_epochs: int = 100
    patience: int = 5
    validation_negatives: int = 1000
    precision: Precision = Precision.FLOAT64
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "precision", Precision(self.precision))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.learning_rate < 0 or self.lambda_reg < 0:
            raise ConfigError(
                "Learning rate and regularization must not be negative"
            )
        if min(
            self.batch_size,
            self.neg_ratio,
            self.max_epochs,
            self.validation_negatives,
        ) < 1:
            raise ConfigError(
                "Batch size, negative ratio, epochs and validation "
                "negatives must be positive"
            )
        if self.patience < 1:
            raise ConfigError("Patience must be at least 1")

    @property
    def dtype(self) -> np.dtype[Any]:
        return np.dtype(str(self.precision))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(
                f"Unknown training settings: {', '.join(sorted(unknown))}"
            )
        return cls(**dict(data))

    def to_mapping(self) -> dict[str, Any]:
        data = asdict(self)
        data["precision"] = str(self.precision)
        return data


def regularizer(leaves: Mapping[str, Tensor]) -> Tensor:
    """Squared Frobenius norm summed over every parameter array."""
    terms = [ad.square_sum(leaf) for leaf in leaves.values()]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def bpr_loss(
    score_pos: Tensor,
    score_neg: Tensor,
    leaves: Mapping[str, Tensor],
    lambda_reg: float,
) -> Tensor:
    """Summed pairwise log-loss plus ``lambda_reg`` times the L2 norm."""
    ranking = -ad.total(ad.log_sigmoid(score_pos - score_neg))
    if not lambda_reg or not leaves:
        return ranking
    return ranking + ad.scale(regularizer(leaves), lambda_reg)


def batch_objective(
    model: DiffusionModel,
    users: IntArray,
    positives: IntArray,
    negatives: IntArray,
    lambda_reg: float,
) -> LossFunction:
    """The loss of one batch of triples as a function of the leaves."""

    def loss(tape: Tape, leaves: Mapping[str, Tensor]) -> Tensor:
        trace = model.trace(tape, leaves)
        return bpr_loss(
            trace.scores(users, positives),
            trace.scores(users, negatives),
            leaves,
            lambda_reg,
        )

    return loss


@dataclass
class AdamState:
    """First and second moment estimates, bias-corrected per step."""

    first: dict[str, Array]
    second: dict[str, Array]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, params: ParameterSet) -> AdamState:
        return cls(
            first={k: np.zeros_like(v) for k, v in params.items()},
            second={k: np.zeros_like(v) for k, v in params.items()},
        )


def optimizer_step(
    params: ParameterSet,
    grads: GradientBundle,
    state: AdamState,
    learning_rate: float,
) -> ParameterSet:
    """One Adam update; ``state`` is advanced in place."""
    if not grads.congruent_with(params):
        raise NumericError(
            "Gradient shapes do not match the parameters",
            context={"params": params.shapes(), "grads": grads.shapes()},
        )
    if not grads.is_finite():
        bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
        raise DivergenceError(
            "Non-finite gradients", context={"arrays": bad, "step": state.step}
        )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    first_fix = 1.0 - b1**state.step
    second_fix = 1.0 - b2**state.step
    updated: dict[str, Array] = {}
    for name, value in params.items():
        g = grads[name]
        m = state.first[name] = b1 * state.first[name] + (1.0 - b1) * g
        v = state.second[name] = b2 * state.second[name] + (1.0 - b2) * g * g
        step = learning_rate * (m / first_fix) / (
            np.sqrt(v / second_fix) + state.epsilon
        )
        updated[name] = (value - step).astype(value.dtype)
    return ParameterSet(updated)


@dataclass
class TrainLog:
    """Epoch records in increasing epoch order."""

    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stop_reason: StopReason | None = None

    def append(self, record: EpochRecord) -> None:
        if self.records and record["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("Epochs must be strictly increasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def mean_losses(self) -> list[float]:
        return [record["mean_loss"] for record in self.records]

    def to_jsonl(self, *, timings: bool = True) -> str:
        lines = []
        for record in self.records:
            data = dict(record)
            if not timings:
                data.pop("wall_time", None)
            lines.append(json.dumps(data, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> TrainLog:
        log = cls()
        for line in text.splitlines():
            if line.strip():
                record: EpochRecord = json.loads(line)
                log.append(record)
                if record.get("best"):
                    log.best_epoch = record["epoch"]
        return log


def _train_step(
    model: DiffusionModel,
    params: ParameterSet,
    state: AdamState,
    batch: tuple[IntArray, IntArray, IntArray],
    config: TrainConfig,
) -> tuple[ParameterSet, float]:
    users, positives, negatives = batch
    objective = batch_objective(
        model, users, positives, negatives, config.lambda_reg
    )
    tape = Tape(dtype=params.dtype)
    leaves = tape.watch_parameters(params)
    loss = objective(tape, leaves)
    grads = tape.backward(loss, params)
    return optimizer_step(params, grads, state, config.learning_rate), float(
        loss.value
    )


def _run_epoch(
    model: DiffusionModel,
    params: ParameterSet,
    state: AdamState,
    triples: TrainTriples,
    config: TrainConfig,
    epoch: int,
    progress: bool,
) -> tuple[ParameterSet, float]:
    total = 0.0
    batches = tqdm(
        triples.batches(config.batch_size),
        total=math.ceil(len(triples) / config.batch_size),
        desc=f"epoch {epoch}",
        disable=not progress,
        leave=False,
    )
    for number, batch in enumerate(batches):
        try:
            params, loss = _train_step(model, params, state, batch, config)
        except NonFiniteError as exc:
            logger.error(
                "Epoch %d batch %d diverged in %s", epoch, number, exc.op
            )
            raise DivergenceError(
                f"Training diverged at epoch {epoch}, batch {number}",
                context={"epoch": epoch, "batch": number, "op": exc.op},
            ) from exc
        if not math.isfinite(loss):
            raise DivergenceError(
                f"Loss became non-finite at epoch {epoch}, batch {number}",
                context={"epoch": epoch, "batch": number},
            )
        logger.debug("Epoch %d batch %d loss %.6f", epoch, number, loss)
        total += loss
    return params, total


def _validation_metrics(
    model: DiffusionModel,
    params: ParameterSet,
    users: Sequence[int],
    held_out: Mapping[int, IntArray],
    candidates: Mapping[int, IntArray],
) -> tuple[float, float]:
    state = model.forward(params)
    table = ranking_table(
        state.scores, users, held_out, candidates, (VALIDATION_CUTOFF,)
    )
    return (
        float(table[metric_name("hr", VALIDATION_CUTOFF)].mean()),
        float(table[metric_name("ndcg", VALIDATION_CUTOFF)].mean()),
    )


async def train(
    graph: HeteroGraph,
    split: InteractionSplit,
    model_config: ModelConfig,
    train_config: TrainConfig | None = None,
    *,
    init_seed: int = 0,
    params: ParameterSet | None = None,
    registry: VariantRegistry | None = None,
    progress: bool = False,
) -> tuple[ParameterSet, TrainLog]:
    """Train on the split's training edges; return the best parameters.

    Epoch ``e`` samples its negatives with seed ``[seed, e]``. The
    validation candidates are drawn once so epochs are compared on the
    same ranking task. Without validation users every epoch counts as
    the best and early stopping is off.
    """
    config = train_config or TrainConfig()
    model = DiffusionModel(
        model_config, split.train_graph(graph), registry=registry
    )
    if params is None:
        params = model.init_parameters(init_seed)
    else:
        model.check_parameters(params)
    params = params.astype(config.dtype)
    state = AdamState.zeros(params)

    val_users, val_held_out, _ = evaluation_users(split, "validation")
    val_candidates = sample_eval_negatives(
        split,
        config.validation_negatives,
        repeat_seed=config.seed,
        users=val_users,
    )
    if not val_users:
        logger.warning(
            "No validation users; keeping the last epoch, no early stopping"
        )

    log = TrainLog()
    best = params
    best_hr = -math.inf
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        triples = sample_train_negatives(
            split, config.neg_ratio, epoch_seed=[config.seed, epoch]
        )
        params, total = await anyio.to_thread.run_sync(
            _run_epoch, model, params, state, triples, config, epoch, progress
        )
        record = EpochRecord(
            epoch=epoch,
            loss=total,
            mean_loss=total / max(len(triples), 1),
            epoch_seed=[config.seed, epoch],
        )
        improved = True
        if val_users:
            hr, ndcg = await anyio.to_thread.run_sync(
                _validation_metrics,
                model,
                params,
                val_users,
                val_held_out,
                val_candidates,
            )
            record["validation_hr"] = hr
            record["validation_ndcg"] = ndcg
            improved = hr > best_hr
            if improved:
                best_hr = hr
        if improved:
            best, stale = params, 0
            log.best_epoch = epoch
        else:
            stale += 1
        record["best"] = improved
        record["wall_time"] = time.perf_counter() - started
        log.append(record)
        logger.info(
            "Epoch %d: mean loss %.6f, validation HR@%d %s%s",
            epoch,
            record["mean_loss"],
            VALIDATION_CUTOFF,
            f"{record['validation_hr']:.4f}"
            if "validation_hr" in record
            else "n/a",
            " (best)" if improved else "",
        )
        if val_users and stale >= config.patience:
            log.stop_reason = StopReason.PATIENCE
            logger.info(
                "Stopping after %d epochs without improvement", stale
            )
            break
    else:
        log.stop_reason = StopReason.MAX_EPOCHS
    return best, log
