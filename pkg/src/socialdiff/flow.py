"""Experiment flow orchestrator.

``ExperimentFlow`` wires preprocessing, training, evaluation and the
auxiliary reports together and persists every artifact through an
``ArtifactStore``. Progress of one run is tracked on an
``ExperimentRecord`` whose ``status`` is driven by the run state machine.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Any

import anyio
import anyio.to_thread
import numpy as np
import pandas as pd
from transitions.core import MachineError

from socialdiff.config import RunConfig
from socialdiff.enums import Activation, AttentionMode, RunStatus, Variant
from socialdiff.evaluation import (
    AttentionStats,
    RankingReport,
    attention_stats,
    evaluate,
    metric_name,
)
from socialdiff.exceptions import (
    CheckpointError,
    ConfigError,
    InvalidTransitionError,
    SocialDiffException,
)
from socialdiff.fsm import create_run_machine
from socialdiff.gradcheck import DEFAULT_TOLERANCE, finite_difference_audit
from socialdiff.graph import HeteroGraph, preprocess
from socialdiff.loaders import (
    load_features,
    load_interactions,
    load_social_links,
)
from socialdiff.model import DiffusionModel, ModelConfig, config_from_header
from socialdiff.params import CheckpointHeader, ParameterSet
from socialdiff.protocols import ArtifactStore
from socialdiff.registry import VariantRegistry
from socialdiff.registry import registry as default_registry
from socialdiff.sampling import InteractionSplit, split
from socialdiff.store import CHECKPOINTS, REPORTS
from socialdiff.synthetic import random_graph
from socialdiff.training import TrainLog, batch_objective, train
from socialdiff.types import AblationRow, GradientAuditPayload

logger = logging.getLogger(__name__)

ABLATION_CUTOFF = 10
AUDIT_USERS = 8
AUDIT_ITEMS = 12
AUDIT_FEATURES = 3
AUDIT_TRIPLES = 16
AUDIT_INIT_STD = 0.3


@dataclass
class ExperimentRecord:
    """What one run was configured with, produced and how long it took."""

    config: dict[str, Any]
    status: str = RunStatus.NEW
    input_hash: str = ""
    graph_ref: str = ""
    checkpoint_ref: str = ""
    log_ref: str = ""
    report_ref: str = ""
    attention_ref: str = ""
    train_log: TrainLog | None = None
    report: RankingReport | None = None
    attention: AttentionStats | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def run_config(self) -> RunConfig:
        return RunConfig.from_mapping(self.config)

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "config": self.config,
            "status": str(self.status),
            "input_hash": self.input_hash,
            "graph_ref": self.graph_ref,
            "checkpoint_ref": self.checkpoint_ref,
            "log_ref": self.log_ref,
            "report_ref": self.report_ref,
            "attention_ref": self.attention_ref,
            "timings": dict(self.timings),
        }
        if self.train_log is not None:
            payload["train_log"] = [
                json.loads(line)
                for line in self.train_log.to_jsonl(timings=False).splitlines()
            ]
        if self.report is not None:
            payload["report"] = self.report.to_payload()
        if self.attention is not None:
            payload["attention"] = self.attention.to_payload()
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class AblationGrid:
    """Model settings to cross; an empty axis keeps the base setting."""

    depths: tuple[int, ...] = (0, 1, 2, 3)
    node_attention: tuple[AttentionMode, ...] = (
        AttentionMode.AVG,
        AttentionMode.ATT,
    )
    graph_attention: tuple[AttentionMode, ...] = (
        AttentionMode.AVG,
        AttentionMode.ATT,
    )
    dims: tuple[int, ...] = ()
    features: tuple[bool, ...] = ()
    variants: tuple[str, ...] = ()

    def cells(self, base: ModelConfig) -> list[ModelConfig]:
        sides = [(f, f) for f in self.features] or [
            (base.use_user_features, base.use_item_features)
        ]
        cells: list[ModelConfig] = []
        for variant, depth, dim, node, graph, (user, item) in (
            itertools.product(
                self.variants or (base.variant,),
                self.depths or (base.depth,),
                self.dims or (base.dim,),
                self.node_attention or (base.node_attention,),
                self.graph_attention or (base.graph_attention,),
                sides,
            )
        ):
            cells.append(
                replace(
                    base,
                    variant=variant,
                    depth=depth,
                    dim=dim,
                    node_attention=node,
                    graph_attention=graph,
                    use_user_features=user,
                    use_item_features=item,
                )
            )
        return cells


def ablation_table(rows: Sequence[AblationRow]) -> str:
    """Tab-separated ablation results, one row per grid cell."""
    frame = pd.DataFrame(list(rows))
    return frame.to_csv(sep="\t", index=False, lineterminator="\n")


def input_digest(config: RunConfig) -> str:
    """Hash of the raw input bytes and the preprocessing settings."""
    digest = hashlib.sha256()
    paths = config.paths
    for name in ("ratings", "links", "user_features", "item_features"):
        path = getattr(paths, name)
        digest.update(name.encode("utf-8"))
        if path:
            try:
                with open(path, "rb") as handle:
                    digest.update(handle.read())
            except FileNotFoundError:
                continue
    data = config.data
    settings = {
        "min_ratings": data.min_ratings,
        "min_links": data.min_links,
        "positive_threshold": data.positive_threshold,
        "standardize_features": data.standardize_features,
        "max_malformed": data.max_malformed,
    }
    digest.update(json.dumps(settings, sort_keys=True).encode("utf-8"))
    return digest.hexdigest()[:16]


def build_graph(config: RunConfig) -> HeteroGraph:
    """Load the raw inputs named in ``config`` and preprocess them."""
    paths, data = config.paths, config.data
    if not paths.ratings or not paths.links:
        raise ConfigError("paths.ratings and paths.links must be set")
    graph = preprocess(
        load_interactions(paths.ratings, max_malformed=data.max_malformed),
        load_social_links(paths.links, max_malformed=data.max_malformed),
        min_ratings=data.min_ratings,
        min_links=data.min_links,
        positive_threshold=data.positive_threshold,
    )
    X = Y = None
    if paths.user_features:
        X = load_features(
            paths.user_features,
            graph.user_index,
            standardize=data.standardize_features,
        ).matrix
    if paths.item_features:
        Y = load_features(
            paths.item_features,
            graph.item_index,
            standardize=data.standardize_features,
        ).matrix
    return graph.with_features(X, Y)


class ExperimentFlow:
    """Framework-agnostic experiment orchestration."""

    def __init__(
        self,
        config: RunConfig,
        store: ArtifactStore,
        *,
        registry: VariantRegistry | None = None,
        progress: bool = False,
    ) -> None:
        self.config = config
        self.store = store
        self.progress = progress
        self.registry = registry or default_registry
        self.limiter = anyio.CapacityLimiter(config.threads)

    def new_record(self) -> ExperimentRecord:
        record = ExperimentRecord(config=self.config.to_mapping())
        create_run_machine(record)
        return record

    def split(self, graph: HeteroGraph) -> InteractionSplit:
        data = self.config.data
        return split(
            graph,
            data.test_frac,
            data.val_frac,
            seed=self.config.seeds.data,
            mode=data.split_mode,
        )

    async def save_record(self, record: ExperimentRecord) -> str:
        return await self.store.save_text(
            REPORTS, "experiment", record.to_json()
        )

    async def preprocess(
        self, record: ExperimentRecord | None = None
    ) -> tuple[ExperimentRecord, HeteroGraph]:
        """Build (or reuse) the preprocessed graph of the configured inputs."""
        record = record or self.new_record()
        started = time.perf_counter()
        digest = await anyio.to_thread.run_sync(input_digest, self.config)
        ref = await self.store.find_graph(digest)
        if ref is not None:
            logger.info("Reusing preprocessed graph %s", ref)
            graph = await self.store.load_graph(ref)
        else:
            graph = await anyio.to_thread.run_sync(build_graph, self.config)
            ref = await self.store.save_graph(graph, digest)
        record.input_hash = digest
        record.graph_ref = ref
        record.timings["preprocess"] = time.perf_counter() - started
        self._trigger(record, "mark_preprocessed")
        return record, graph

    async def train(
        self,
        record: ExperimentRecord | None = None,
        graph: HeteroGraph | None = None,
        *,
        model_config: ModelConfig | None = None,
    ) -> ExperimentRecord:
        """Train, store the best checkpoint and the epoch log."""
        if record is None or graph is None:
            record, graph = await self.preprocess(record)
        model_config = model_config or self.config.model
        partition = self.split(graph)
        self._trigger(record, "start_training")
        started = time.perf_counter()
        try:
            params, log = await train(
                graph,
                partition,
                model_config,
                self.config.training,
                init_seed=self.config.seeds.init,
                registry=self.registry,
                progress=self.progress,
            )
            header = DiffusionModel(
                model_config,
                partition.train_graph(graph),
                registry=self.registry,
            ).checkpoint_header(self.config.seeds.init)
            record.checkpoint_ref = await self.store.save_checkpoint(
                params, header
            )
            record.log_ref = await self.store.save_text(
                REPORTS, "train-log", log.to_jsonl(), suffix=".jsonl"
            )
        except SocialDiffException:
            self._trigger(record, "fail")
            raise
        record.train_log = log
        record.timings["train"] = time.perf_counter() - started
        self._trigger(record, "finish_training")
        await self.save_record(record)
        return record

    async def _checkpoint(
        self,
        record: ExperimentRecord,
        graph: HeteroGraph,
        checkpoint_ref: str | None,
    ) -> tuple[ParameterSet, CheckpointHeader]:
        ref = (
            checkpoint_ref
            or record.checkpoint_ref
            or await self.store.latest(CHECKPOINTS, "model")
        )
        if not ref:
            raise CheckpointError("No checkpoint to load; train a model first")
        params, header = await self.store.load_checkpoint(ref)
        if (header.users, header.items) != (graph.M, graph.N):
            raise CheckpointError(
                "Checkpoint was trained on a different graph",
                context={
                    "checkpoint": [header.users, header.items],
                    "graph": [graph.M, graph.N],
                },
            )
        record.checkpoint_ref = ref
        return params, header

    async def evaluate(
        self,
        record: ExperimentRecord | None = None,
        graph: HeteroGraph | None = None,
        *,
        checkpoint_ref: str | None = None,
    ) -> ExperimentRecord:
        """Rank test items for a stored checkpoint and store the report."""
        if record is None or graph is None:
            record, graph = await self.preprocess(record)
        params, header = await self._checkpoint(record, graph, checkpoint_ref)
        started = time.perf_counter()
        report = await evaluate(
            graph,
            self.split(graph),
            params,
            config_from_header(header),
            self.config.evaluation,
            registry=self.registry,
            limiter=self.limiter,
        )
        record.report = report
        record.report_ref = await self.store.save_text(
            REPORTS, "ranking", report.to_json()
        )
        record.timings["evaluate"] = time.perf_counter() - started
        self._trigger(record, "mark_evaluated")
        await self.save_record(record)
        return record

    async def run(self) -> ExperimentRecord:
        """Preprocess, train and evaluate one record on one graph."""
        record, graph = await self.preprocess()
        await self.train(record, graph)
        return await self.evaluate(record, graph)

    async def export_attention(
        self,
        record: ExperimentRecord | None = None,
        graph: HeteroGraph | None = None,
        *,
        checkpoint_ref: str | None = None,
    ) -> AttentionStats:
        """Graph-level attention statistics plus per-user weight tables."""
        if record is None or graph is None:
            record, graph = await self.preprocess(record)
        params, header = await self._checkpoint(record, graph, checkpoint_ref)
        model = DiffusionModel(
            config_from_header(header),
            self.split(graph).train_graph(graph),
            registry=self.registry,
        )
        state = await anyio.to_thread.run_sync(model.forward, params)
        stats = attention_stats(state)
        if not stats.layers:
            raise ConfigError(
                f"Variant {header.variant!r} has no graph-level attention"
            )
        for layer, gamma in enumerate(state.gamma, start=1):
            if gamma is None:
                continue
            frame = pd.DataFrame(
                {
                    "user": graph.user_ids,
                    "social": gamma[:, 0],
                    "interest": gamma[:, 1],
                }
            )
            await self.store.save_text(
                REPORTS,
                f"attention-layer{layer}",
                frame.to_csv(sep="\t", index=False, lineterminator="\n"),
                suffix=".tsv",
            )
        record.attention = stats
        record.attention_ref = await self.store.save_text(
            REPORTS, "attention", stats.to_json()
        )
        await self.save_record(record)
        return stats

    async def ablate(
        self, grid: AblationGrid | None = None
    ) -> list[AblationRow]:
        """Train and evaluate every grid cell on the same split."""
        grid = grid or AblationGrid()
        record, graph = await self.preprocess()
        evaluation = self.config.evaluation
        if ABLATION_CUTOFF not in evaluation.top_n:
            evaluation = replace(
                evaluation, top_n=(*evaluation.top_n, ABLATION_CUTOFF)
            )
        flow = ExperimentFlow(
            replace(self.config, eval=evaluation),
            self.store,
            registry=self.registry,
            progress=self.progress,
        )
        hr, ndcg = (
            metric_name("hr", ABLATION_CUTOFF),
            metric_name("ndcg", ABLATION_CUTOFF),
        )
        rows: list[AblationRow] = []
        for cell in grid.cells(self.config.model):
            run = flow.new_record()
            run.input_hash, run.graph_ref = record.input_hash, record.graph_ref
            flow._trigger(run, "mark_preprocessed")
            await flow.train(run, graph, model_config=cell)
            await flow.evaluate(run, graph)
            assert run.report is not None
            rows.append(
                AblationRow(
                    variant=str(cell.variant),
                    depth=cell.depth,
                    dim=cell.dim,
                    node_attention=str(cell.node_attention),
                    graph_attention=str(cell.graph_attention),
                    features=cell.use_user_features,
                    hr=run.report.mean(hr),
                    ndcg=run.report.mean(ndcg),
                    checkpoint=run.checkpoint_ref,
                )
            )
        reference = next(
            (
                row
                for row in rows
                if row["variant"] == Variant.BPR and row["depth"] == 0
            ),
            None,
        )
        if reference is not None and reference["hr"] > 0:
            for row in rows:
                row["improvement"] = row["hr"] / reference["hr"] - 1.0
        await self.store.save_text(
            REPORTS, "ablation", ablation_table(rows), suffix=".tsv"
        )
        return rows

    async def check_gradients(
        self,
        variants: Sequence[str] | None = None,
        *,
        sample_count: int = 64,
        tolerance: float = DEFAULT_TOLERANCE,
        activation: Activation = Activation.TANH,
    ) -> list[GradientAuditPayload]:
        """Audit the full batched loss on a micro-model per configuration.

        The default activation is smooth so central differences never
        straddle a kink.
        """
        seed = self.config.seeds.init
        graph = random_graph(
            AUDIT_USERS,
            AUDIT_ITEMS,
            seed=seed,
            user_features=AUDIT_FEATURES,
            item_features=AUDIT_FEATURES,
        )
        rng = np.random.default_rng(seed)
        users = rng.integers(0, graph.M, size=AUDIT_TRIPLES)
        positives = rng.integers(0, graph.N, size=AUDIT_TRIPLES)
        negatives = rng.integers(0, graph.N, size=AUDIT_TRIPLES)
        slugs = list(
            variants or [slug for slug, _ in self.registry.get_choices()]
        )
        results: list[GradientAuditPayload] = []
        for slug in slugs:
            modes = (
                list(itertools.product(AttentionMode, repeat=2))
                if slug == Variant.DIFFNETPP
                else [(AttentionMode.ATT, AttentionMode.ATT)]
            )
            for node, graph_mode in modes:
                config = ModelConfig(
                    variant=slug,
                    dim=4,
                    depth=2,
                    hidden=4,
                    node_attention=node,
                    graph_attention=graph_mode,
                    hidden_activation=activation,
                    use_user_features=True,
                    use_item_features=True,
                )
                model = DiffusionModel(config, graph, registry=self.registry)
                params = model.init_parameters(seed, std=AUDIT_INIT_STD)
                objective = batch_objective(
                    model,
                    users,
                    positives,
                    negatives,
                    self.config.training.lambda_reg,
                )
                audit = await anyio.to_thread.run_sync(
                    partial(
                        finite_difference_audit,
                        objective,
                        params,
                        sample_count=sample_count,
                        seed=seed,
                    )
                )
                label = f"{slug} node={node} graph={graph_mode}"
                results.append(audit.to_payload(label, tolerance))
        await self.store.save_text(
            REPORTS,
            "gradients",
            json.dumps(results, indent=2, sort_keys=True) + "\n",
        )
        return results

    def _trigger(
        self, record: ExperimentRecord, callback: str, **kwargs: Any
    ) -> None:
        if not hasattr(record, "may_trigger"):
            create_run_machine(record)
        trigger = getattr(record, callback, None)
        if trigger is None or not callable(trigger):
            raise InvalidTransitionError(
                f"Run has no callback trigger {callback!r}"
            )
        if not record.may_trigger(callback):  # type: ignore[attr-defined]  # Method added dynamically by transitions.Machine
            raise InvalidTransitionError(
                f"Callback {callback!r} cannot be executed from status "
                f"{record.status!r}"
            )
        try:
            trigger(**kwargs)
        except MachineError as exc:
            raise InvalidTransitionError(str(exc)) from exc
