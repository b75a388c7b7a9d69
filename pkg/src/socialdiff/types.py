"""Shared JSON payload definitions."""

from typing import TypedDict


class DatasetStats(TypedDict):
    """Size and density summary of a preprocessed graph."""

    users: int
    items: int
    ratings: int
    links: int
    rating_density: float
    link_density: float
    user_features: bool
    item_features: bool


class _EpochRecordRequired(TypedDict):
    epoch: int
    loss: float
    mean_loss: float
    epoch_seed: list[int]


class EpochRecord(_EpochRecordRequired, total=False):
    """One line of the line-delimited training log."""

    validation_hr: float
    validation_ndcg: float
    best: bool
    wall_time: float


class MetricSummary(TypedDict):
    """Mean and standard deviation of one metric across repeats."""

    mean: float
    std: float
    repeats: list[float]


class GroupMetrics(TypedDict):
    """Metrics restricted to one sparsity group."""

    users: int
    metrics: dict[str, float]


class _RankingReportRequired(TypedDict):
    top_n: list[int]
    negatives: int
    repeats: int
    users_evaluated: int
    users_excluded: int
    metrics: dict[str, MetricSummary]


class RankingReportPayload(_RankingReportRequired, total=False):
    """JSON document written for ``evaluate``."""

    groups: dict[str, GroupMetrics]
    empty_groups: list[str]
    candidate_shortfall: int
    all_items: bool


class AttentionLayerStats(TypedDict):
    """Graph-level attention summary for one diffusion layer."""

    layer: int
    users: int
    social_mean: float
    interest_mean: float
    social_var: float
    interest_var: float
    social_empty: int
    interest_empty: int


class GradientAuditPayload(TypedDict):
    """Outcome of one finite-difference audit."""

    label: str
    max_error: float
    samples: int
    per_array: dict[str, float]
    passed: bool


class _AblationRowRequired(TypedDict):
    variant: str
    depth: int
    dim: int
    node_attention: str
    graph_attention: str
    features: bool
    hr: float
    ndcg: float


class AblationRow(_AblationRowRequired, total=False):
    """One cell of the ablation grid."""

    improvement: float
    checkpoint: str
