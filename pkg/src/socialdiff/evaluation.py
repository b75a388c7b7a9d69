"""Top-N ranking evaluation over sampled candidate negatives.

Each evaluated user ranks its test positives mixed with sampled
unobserved items. Scores tie-break by ascending item index so rankings
are deterministic. Metrics are averaged uniformly over users within a
repeat, then summarized across repeats.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import anyio
import anyio.to_thread
import numpy as np
from numpy.typing import NDArray

from socialdiff.exceptions import ConfigError, DataError
from socialdiff.graph import HeteroGraph, IntArray
from socialdiff.model import DiffusionModel, DiffusionState, ModelConfig
from socialdiff.params import ParameterSet
from socialdiff.registry import VariantRegistry
from socialdiff.sampling import (
    InteractionSplit,
    group_labels,
    sample_eval_negatives,
    sparsity_groups,
)
from socialdiff.types import (
    AttentionLayerStats,
    GroupMetrics,
    MetricSummary,
    RankingReportPayload,
)

logger = logging.getLogger(__name__)

Array = NDArray[Any]
Scorer = Callable[[int, IntArray], Array]


@dataclass(frozen=True)
class EvalConfig:
    """Ranking protocol settings; ``seed`` is the base repeat seed."""

    top_n: tuple[int, ...] = (5, 10, 15)
    negatives: int = 1000
    repeats: int = 5
    groups: tuple[int, ...] = (8, 16, 32, 64)
    all_items: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "top_n", tuple(int(n) for n in self.top_n))
        object.__setattr__(self, "groups", tuple(int(g) for g in self.groups))
        if not self.top_n or min(self.top_n) < 1:
            raise ConfigError("Every cutoff N must be at least 1")
        if self.negatives < 1 or self.repeats < 1:
            raise ConfigError("Negatives and repeats must be positive")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> EvalConfig:
        return cls(**dict(data))

    def to_mapping(self) -> dict[str, Any]:
        return {
            "top_n": list(self.top_n),
            "negatives": self.negatives,
            "repeats": self.repeats,
            "groups": list(self.groups),
            "all_items": self.all_items,
            "seed": self.seed,
        }


def metric_name(metric: str, n: int) -> str:
    return f"{metric}@{n}"


def order_by_score(items: IntArray, scores: Array) -> IntArray:
    """Items by descending score, ties by ascending item index."""
    items = np.asarray(items, dtype=np.int64)
    return items[np.lexsort((items, -np.asarray(scores)))]


def rank_candidates(
    user: int,
    test_items: IntArray,
    negatives: IntArray,
    state: DiffusionState,
) -> IntArray:
    """Rank the user's test positives mixed with its negatives."""
    candidates = np.concatenate(
        [np.asarray(test_items, dtype=np.int64), negatives]
    )
    return order_by_score(candidates, state.scores(user, candidates))


def _hit_positions(
    ranked: IntArray, test_items: IntArray, n: int
) -> NDArray[np.int64]:
    if n < 1:
        raise ConfigError("Cutoff N must be at least 1")
    if not len(test_items):
        raise DataError("Cannot score a user without test items")
    return np.flatnonzero(np.isin(ranked[:n], test_items)) + 1


def hr_at_n(ranked: IntArray, test_items: IntArray, n: int) -> float:
    """Share of the test items that appear in the top ``n``."""
    hits = _hit_positions(ranked, test_items, n)
    return len(hits) / len(test_items)


def ndcg_at_n(ranked: IntArray, test_items: IntArray, n: int) -> float:
    hits = _hit_positions(ranked, test_items, n)
    dcg = float(np.sum(1.0 / np.log2(hits + 1.0)))
    ideal = np.arange(1, min(n, len(test_items)) + 1, dtype=np.float64)
    return dcg / float(np.sum(1.0 / np.log2(ideal + 1.0)))


def ranking_table(
    scorer: Scorer,
    users: Sequence[int],
    held_out: Mapping[int, IntArray],
    candidates: Mapping[int, IntArray],
    top_n: Sequence[int],
) -> dict[str, Array]:
    """Per-user HR and NDCG for every cutoff, rows aligned with ``users``."""
    table = {
        metric_name(metric, n): np.zeros(len(users))
        for n in top_n
        for metric in ("hr", "ndcg")
    }
    for row, user in enumerate(users):
        test_items = held_out[user]
        pool = np.concatenate([test_items, candidates[user]])
        ranked = order_by_score(pool, scorer(user, pool))
        for n in top_n:
            table[metric_name("hr", n)][row] = hr_at_n(ranked, test_items, n)
            table[metric_name("ndcg", n)][row] = ndcg_at_n(
                ranked, test_items, n
            )
    return table


@dataclass(frozen=True, eq=False)
class RankingReport:
    """Per-user, per-repeat metric values and their summaries.

    ``per_user[metric]`` is ``len(users) x repeats``.
    """

    top_n: tuple[int, ...]
    negatives: int
    users: IntArray
    per_user: dict[str, Array]
    users_excluded: int = 0
    candidate_shortfall: int = 0
    all_items: bool = False
    groups: dict[str, GroupMetrics] = field(default_factory=dict)
    empty_groups: tuple[str, ...] = ()

    @property
    def repeats(self) -> int:
        first = next(iter(self.per_user.values()))
        return int(first.shape[1])

    @property
    def metrics(self) -> list[str]:
        return list(self.per_user)

    def repeat_values(self, metric: str) -> Array:
        """One user-averaged value per repeat."""
        values = self.per_user[metric]
        if not len(self.users):
            return np.zeros(values.shape[1])
        return values.mean(axis=0)

    def user_means(self, metric: str) -> Array:
        """Each user's value averaged over repeats."""
        return self.per_user[metric].mean(axis=1)

    def mean(self, metric: str) -> float:
        return float(self.repeat_values(metric).mean())

    def summary(self, metric: str) -> MetricSummary:
        values = self.repeat_values(metric)
        return MetricSummary(
            mean=float(values.mean()),
            std=float(values.std()),
            repeats=[float(v) for v in values],
        )

    def with_groups(
        self, labels: Mapping[int, str], order: Sequence[str]
    ) -> RankingReport:
        groups, empty = sparsity_report(self, labels, order)
        return replace(self, groups=groups, empty_groups=tuple(empty))

    def to_payload(self) -> RankingReportPayload:
        payload = RankingReportPayload(
            top_n=list(self.top_n),
            negatives=self.negatives,
            repeats=self.repeats,
            users_evaluated=len(self.users),
            users_excluded=self.users_excluded,
            metrics={name: self.summary(name) for name in self.metrics},
            candidate_shortfall=self.candidate_shortfall,
            all_items=self.all_items,
        )
        if self.groups or self.empty_groups:
            payload["groups"] = self.groups
            payload["empty_groups"] = list(self.empty_groups)
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), indent=2, sort_keys=True) + "\n"


def sparsity_report(
    report: RankingReport,
    labels: Mapping[int, str],
    order: Sequence[str],
) -> tuple[dict[str, GroupMetrics], list[str]]:
    """Metrics restricted to each user group.

    Groups without evaluated users are left out and listed separately.
    """
    user_labels = np.array(
        [labels[int(user)] for user in report.users], dtype=object
    )
    groups: dict[str, GroupMetrics] = {}
    empty: list[str] = []
    for label in order:
        members = user_labels == label
        count = int(np.count_nonzero(members))
        if not count:
            empty.append(label)
            continue
        groups[label] = GroupMetrics(
            users=count,
            metrics={
                name: float(report.user_means(name)[members].mean())
                for name in report.metrics
            },
        )
    if empty:
        logger.info("No evaluated users in groups %s", ", ".join(empty))
    return groups, empty


def _all_item_candidates(
    split: InteractionSplit, users: Sequence[int]
) -> dict[int, IntArray]:
    # Everything except the user's train and validation positives;
    # the test items are appended back by the ranking step.
    everything = np.arange(split.items, dtype=np.int64)
    result: dict[int, IntArray] = {}
    for user in users:
        result[user] = np.setdiff1d(everything, split.per_user_positives(user))
    return result


def evaluation_users(
    split: InteractionSplit, name: str = "test"
) -> tuple[list[int], dict[int, IntArray], int]:
    """Users with held-out items and at least one train positive.

    Returns the users, their held-out items and the number of users
    excluded for having no training data.
    """
    held_out = split.held_out(name)
    counts = split.train_counts
    users = [user for user in held_out if counts[user] > 0]
    return users, held_out, len(held_out) - len(users)


async def _score_chunks(
    scorer: Scorer,
    users: Sequence[int],
    held_out: Mapping[int, IntArray],
    candidates: Mapping[int, IntArray],
    top_n: Sequence[int],
    limiter: anyio.CapacityLimiter,
) -> dict[str, Array]:
    chunk_count = max(1, min(len(users), int(limiter.total_tokens)))
    chunks = [
        [int(u) for u in chunk] for chunk in np.array_split(users, chunk_count)
    ]
    results: list[dict[str, Array] | None] = [None] * len(chunks)

    async def run(position: int, chunk: list[int]) -> None:
        results[position] = await anyio.to_thread.run_sync(
            ranking_table,
            scorer,
            chunk,
            held_out,
            candidates,
            top_n,
            limiter=limiter,
        )

    async with anyio.create_task_group() as tg:
        for position, chunk in enumerate(chunks):
            tg.start_soon(run, position, chunk)
    parts = [part for part in results if part is not None]
    return {
        name: np.concatenate([part[name] for part in parts])
        for name in parts[0]
    }


async def evaluate_scorer(
    scorer: Scorer,
    split: InteractionSplit,
    config: EvalConfig,
    *,
    limiter: anyio.CapacityLimiter | None = None,
    partition: str = "test",
) -> RankingReport:
    """Run the repeated ranking protocol against any scoring function."""
    limiter = limiter or anyio.CapacityLimiter(1)
    users, held_out, excluded = evaluation_users(split, partition)
    if excluded:
        logger.warning(
            "Excluded %d users without training positives from evaluation",
            excluded,
        )
    per_repeat: list[dict[str, Array]] = []
    shortfall = 0
    for repeat in range(config.repeats):
        if config.all_items:
            candidates = _all_item_candidates(split, users)
        else:
            candidates = sample_eval_negatives(
                split,
                config.negatives,
                repeat_seed=config.seed + repeat,
                users=users,
            )
            shortfall = max(
                shortfall,
                sum(len(c) < config.negatives for c in candidates.values()),
            )
        per_repeat.append(
            await _score_chunks(
                scorer, users, held_out, candidates, config.top_n, limiter
            )
        )
    per_user = {
        name: np.stack([table[name] for table in per_repeat], axis=1)
        for name in per_repeat[0]
    }
    report = RankingReport(
        top_n=config.top_n,
        negatives=config.negatives,
        users=np.asarray(users, dtype=np.int64),
        per_user=per_user,
        users_excluded=excluded,
        candidate_shortfall=shortfall,
        all_items=config.all_items,
    )
    if config.groups:
        report = report.with_groups(
            sparsity_groups(split, config.groups), group_labels(config.groups)
        )
    return report


async def evaluate(
    graph: HeteroGraph,
    split: InteractionSplit,
    params: ParameterSet,
    model_config: ModelConfig,
    config: EvalConfig | None = None,
    *,
    registry: VariantRegistry | None = None,
    limiter: anyio.CapacityLimiter | None = None,
) -> RankingReport:
    """HR@N and NDCG@N of trained parameters on the test partition.

    Diffusion runs over the training graph only; the state is identical
    for every repeat, so it is computed once.
    """
    config = config or EvalConfig()
    model = DiffusionModel(
        model_config, split.train_graph(graph), registry=registry
    )
    state = await anyio.to_thread.run_sync(model.forward, params)
    state.user_matrix()
    state.item_matrix()
    report = await evaluate_scorer(state.scores, split, config, limiter=limiter)
    for n in config.top_n:
        logger.info(
            "HR@%d=%.4f NDCG@%d=%.4f over %d users",
            n,
            report.mean(metric_name("hr", n)),
            n,
            report.mean(metric_name("ndcg", n)),
            len(report.users),
        )
    return report


@dataclass(frozen=True)
class AttentionStats:
    """Graph-level attention summary per diffusion layer."""

    layers: tuple[AttentionLayerStats, ...]

    def to_payload(self) -> list[AttentionLayerStats]:
        return list(self.layers)

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), indent=2, sort_keys=True) + "\n"


def attention_stats(state: DiffusionState) -> AttentionStats:
    """Mean and variance of the social and interest weights per layer.

    Only users with both a non-empty followee set and a non-empty rated
    set contribute; the others carry forced weights.
    """
    index = state.index
    has_social, has_interest = index.has_social, index.has_interest
    both = has_social & has_interest
    layers: list[AttentionLayerStats] = []
    for layer, gamma in enumerate(state.gamma, start=1):
        if gamma is None:
            continue
        included = gamma[both]
        if len(included):
            means = included.mean(axis=0)
            variances = included.var(axis=0)
        else:
            means = variances = np.zeros(2)
        layers.append(
            AttentionLayerStats(
                layer=layer,
                users=int(len(included)),
                social_mean=float(means[0]),
                interest_mean=float(means[1]),
                social_var=float(variances[0]),
                interest_var=float(variances[1]),
                social_empty=int(np.count_nonzero(~has_social)),
                interest_empty=int(np.count_nonzero(~has_interest)),
            )
        )
    return AttentionStats(layers=tuple(layers))


def random_hit_rate(n: int, negatives: int) -> float:
    """Expected HR@n of a random scorer with one test item."""
    return min(n, negatives + 1) / (negatives + 1)
