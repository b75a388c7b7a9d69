"""Shared test fixtures for socialdiff."""

from __future__ import annotations

from collections.abc import Iterator
from typing import Any

import numpy as np
import pytest

from socialdiff.exceptions import CheckpointError, DataError
from socialdiff.graph import HeteroGraph
from socialdiff.params import CheckpointHeader, ParameterSet
from socialdiff.registry import registry
from socialdiff.synthetic import random_graph


def micro_graph(*, features: bool = False) -> HeteroGraph:
    """Four users, five items.

    User 3 follows nobody and user 2 rated nothing, so both forced
    attention branches are exercised.
    """
    interest = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 3), (3, 2), (3, 4)]
    social = [(0, 1), (0, 2), (1, 0), (2, 0), (2, 3)]
    rng = np.random.default_rng(7)
    return HeteroGraph.from_edges(
        4,
        5,
        np.array(interest),
        np.array(social),
        user_ids=("u0", "u1", "u2", "u3"),
        item_ids=("i0", "i1", "i2", "i3", "i4"),
        X=rng.normal(size=(4, 3)) if features else None,
        Y=rng.normal(size=(5, 2)) if features else None,
    )


def random_graphs(
    count: int,
    *,
    max_users: int = 30,
    max_items: int = 40,
    seed: int = 0,
    features: bool = False,
) -> Iterator[HeteroGraph]:
    rng = np.random.default_rng(seed)
    for index in range(count):
        yield random_graph(
            int(rng.integers(3, max_users + 1)),
            int(rng.integers(3, max_items + 1)),
            seed=seed * 1000 + index,
            rating_prob=float(rng.uniform(0.05, 0.4)),
            link_prob=float(rng.uniform(0.05, 0.4)),
            user_features=3 if features else 0,
            item_features=2 if features else 0,
        )


class InMemoryStore:
    """Minimal async artifact store used by flow tests."""

    def __init__(self) -> None:
        self.graphs: dict[str, HeteroGraph] = {}
        self.checkpoints: dict[
            str, tuple[ParameterSet, CheckpointHeader]
        ] = {}
        self.texts: dict[str, str] = {}
        self.pointers: dict[tuple[str, str], str] = {}
        self.save_count = 0

    async def save_graph(self, graph: HeteroGraph, digest: str) -> str:
        ref = f"preprocessed/{digest}"
        self.graphs[ref] = graph
        self.pointers["preprocessed", "graph"] = ref
        self.save_count += 1
        return ref

    async def load_graph(self, ref: str) -> HeteroGraph:
        if ref not in self.graphs:
            raise DataError(f"No graph {ref!r}")
        return self.graphs[ref]

    async def find_graph(self, digest: str) -> str | None:
        ref = f"preprocessed/{digest}"
        return ref if ref in self.graphs else None

    async def save_checkpoint(
        self, params: ParameterSet, header: CheckpointHeader
    ) -> str:
        ref = f"checkpoints/{len(self.checkpoints)}.ckpt"
        self.checkpoints[ref] = (params.astype(np.float32), header)
        self.pointers["checkpoints", "model"] = ref
        self.save_count += 1
        return ref

    async def load_checkpoint(
        self, ref: str
    ) -> tuple[ParameterSet, CheckpointHeader]:
        if ref not in self.checkpoints:
            raise CheckpointError(f"No checkpoint {ref!r}")
        return self.checkpoints[ref]

    async def save_text(
        self, kind: str, name: str, text: str, *, suffix: str = ".json"
    ) -> str:
        ref = f"{kind}/{name}-{len(self.texts)}{suffix}"
        self.texts[ref] = text
        self.pointers[kind, name] = ref
        self.save_count += 1
        return ref

    async def load_text(self, ref: str) -> str:
        if ref not in self.texts:
            raise DataError(f"No artifact {ref!r}")
        return self.texts[ref]

    async def latest(self, kind: str, name: str) -> str | None:
        return self.pointers.get((kind, name))

    def latest_text(self, kind: str, name: str) -> str:
        return self.texts[self.pointers[kind, name]]


@pytest.fixture
def graph() -> HeteroGraph:
    return micro_graph()


@pytest.fixture
def featured_graph() -> HeteroGraph:
    return micro_graph(features=True)


@pytest.fixture
def store() -> InMemoryStore:
    return InMemoryStore()


@pytest.fixture(autouse=True)
def isolate_global_registry() -> Iterator[None]:
    """Reset global registry state between tests."""
    old_variants: dict[str, Any] = dict(registry._variants)
    old_discovered = registry._discovered
    registry._variants = {}
    registry._discovered = False
    try:
        yield
    finally:
        registry._variants = old_variants
        registry._discovered = old_discovered
