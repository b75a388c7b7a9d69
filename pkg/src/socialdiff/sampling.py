"""Train/validation/test splits and negative sampling.

Negatives are drawn from each user's complement set directly: with the
user's sorted positives ``p``, the ``r``-th non-positive item is
``r + searchsorted(p - arange(len(p)), r, side="right")``. No rejection
loop is needed and every draw is exact.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from socialdiff.enums import SplitMode
from socialdiff.exceptions import ConfigError, EmptyGraphError
from socialdiff.graph import HeteroGraph, IntArray

logger = logging.getLogger(__name__)

Seed = int | Sequence[int]

# Guards floor() against fractions like 0.1 * 100 = 10.000000000000002.
_FLOOR_SLACK = 1e-9

TRAIN, VALIDATION, TEST = 0, 1, 2


def _positives(users: int, items: int, pairs: IntArray) -> sp.csr_matrix:
    matrix = sp.csr_matrix(
        (np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])),
        shape=(users, items),
    )
    matrix.sort_indices()
    return matrix


@dataclass(frozen=True, eq=False)
class InteractionSplit:
    """Disjoint train/validation/test positive pairs of one graph."""

    users: int
    items: int
    train: IntArray
    validation: IntArray
    test: IntArray
    rescued: int = 0

    @cached_property
    def positives(self) -> sp.csr_matrix:
        """Every positive of every partition, one row per user."""
        pairs = np.concatenate([self.train, self.validation, self.test])
        return _positives(self.users, self.items, pairs)

    @cached_property
    def train_positives(self) -> sp.csr_matrix:
        return _positives(self.users, self.items, self.train)

    @cached_property
    def train_counts(self) -> IntArray:
        return np.bincount(self.train[:, 0], minlength=self.users)

    def per_user_positives(self, user: int) -> IntArray:
        matrix = self.positives
        return matrix.indices[matrix.indptr[user] : matrix.indptr[user + 1]]

    def partition(self, name: str) -> IntArray:
        return {
            "train": self.train,
            "validation": self.validation,
            "test": self.test,
        }[name]

    def held_out(self, name: str = "test") -> dict[int, IntArray]:
        """Held-out items per user of one partition, users ascending."""
        pairs = self.partition(name)
        if not len(pairs):
            return {}
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        users, starts = np.unique(pairs[:, 0], return_index=True)
        return {
            int(user): items
            for user, items in zip(
                users, np.split(pairs[:, 1], starts[1:]), strict=True
            )
        }

    def train_graph(self, graph: HeteroGraph) -> HeteroGraph:
        """The graph diffusion runs on: only training interest edges."""
        return graph.restrict(self.train)


def _held_out_sizes(
    total: int, test_frac: float, val_frac: float
) -> tuple[int, int]:
    n_test = math.floor(total * test_frac + _FLOOR_SLACK)
    n_val = math.floor((total - n_test) * val_frac + _FLOOR_SLACK)
    return n_test, n_val


def split(
    graph: HeteroGraph,
    test_frac: float = 0.1,
    val_frac: float = 0.1,
    seed: Seed = 0,
    *,
    mode: SplitMode = SplitMode.GLOBAL,
) -> InteractionSplit:
    """Randomly partition the graph's positives.

    ``|test| = floor(total * test_frac)`` and
    ``|validation| = floor((total - |test|) * val_frac)``. A user whose
    positives all land in test or validation gets their first positive
    (lowest item index) moved back to train; the moved count is kept in
    ``rescued``.
    """
    if not 0 <= test_frac < 1 or not 0 <= val_frac < 1:
        raise ConfigError(
            "Split fractions must lie in [0, 1)",
            context={"test_frac": test_frac, "val_frac": val_frac},
        )
    pairs = graph.interest_edges
    total = len(pairs)
    if not total:
        raise EmptyGraphError("Cannot split a graph without positives")
    rng = np.random.default_rng(seed)
    part = np.full(total, TRAIN, dtype=np.int8)

    if SplitMode(mode) is SplitMode.GLOBAL:
        n_test, n_val = _held_out_sizes(total, test_frac, val_frac)
        order = rng.permutation(total)
        part[order[:n_test]] = TEST
        part[order[n_test : n_test + n_val]] = VALIDATION
    else:
        indptr = graph.R.indptr
        for user in range(graph.M):
            start, stop = indptr[user], indptr[user + 1]
            n_test, n_val = _held_out_sizes(stop - start, test_frac, val_frac)
            order = start + rng.permutation(stop - start)
            part[order[:n_test]] = TEST
            part[order[n_test : n_test + n_val]] = VALIDATION

    has_train = np.bincount(
        pairs[part == TRAIN, 0], minlength=graph.M
    ).astype(bool)
    has_any = np.diff(graph.R.indptr) > 0
    stranded = np.flatnonzero(has_any & ~has_train)
    part[graph.R.indptr[stranded]] = TRAIN
    if len(stranded):
        logger.info(
            "Kept one positive in train for %d users with no training data",
            len(stranded),
        )

    result = InteractionSplit(
        users=graph.M,
        items=graph.N,
        train=pairs[part == TRAIN],
        validation=pairs[part == VALIDATION],
        test=pairs[part == TEST],
        rescued=len(stranded),
    )
    logger.info(
        "Split %d positives: %d train, %d validation, %d test",
        total,
        len(result.train),
        len(result.validation),
        len(result.test),
    )
    return result


def _complement_keys(positives: sp.csr_matrix) -> NDArray[np.int64]:
    # Row-major keys of (user, p_j - j); non-decreasing within every row.
    items = positives.shape[1]
    rows = np.repeat(
        np.arange(positives.shape[0], dtype=np.int64), np.diff(positives.indptr)
    )
    within = np.arange(positives.nnz, dtype=np.int64) - positives.indptr[rows]
    return rows * (items + 1) + (positives.indices - within)


def _nth_non_positive(
    positives: sp.csr_matrix,
    keys: NDArray[np.int64],
    users: IntArray,
    offsets: IntArray,
) -> IntArray:
    items = positives.shape[1]
    found = np.searchsorted(keys, users * (items + 1) + offsets, side="right")
    return offsets + (found - positives.indptr[users])


@dataclass(frozen=True, eq=False)
class TrainTriples:
    """Shuffled ``(user, positive item, negative item)`` training triples."""

    users: IntArray
    positives: IntArray
    negatives: IntArray
    skipped_users: int = 0

    def __len__(self) -> int:
        return len(self.users)

    def batches(
        self, size: int
    ) -> Iterator[tuple[IntArray, IntArray, IntArray]]:
        for start in range(0, len(self), size):
            stop = start + size
            yield (
                self.users[start:stop],
                self.positives[start:stop],
                self.negatives[start:stop],
            )


def sample_train_negatives(
    split: InteractionSplit, ratio: int = 8, epoch_seed: Seed = 0
) -> TrainTriples:
    """``ratio`` negatives per training positive, shuffled.

    Negatives avoid the user's positives in every partition. Users whose
    positives cover the whole item set are skipped.
    """
    if ratio < 1:
        raise ConfigError("Negative ratio must be at least 1")
    rng = np.random.default_rng(epoch_seed)
    positives = split.positives
    counts = np.diff(positives.indptr)
    saturated = counts >= split.items
    train = split.train
    keep = ~saturated[train[:, 0]]
    skipped = int(np.count_nonzero(saturated & (split.train_counts > 0)))
    if skipped:
        logger.warning(
            "Skipped %d users who interacted with every item", skipped
        )
    users = np.repeat(train[keep, 0], ratio)
    pos_items = np.repeat(train[keep, 1], ratio)
    offsets = rng.integers(0, split.items - counts[users])
    negatives = _nth_non_positive(
        positives, _complement_keys(positives), users, offsets
    )
    order = rng.permutation(len(users))
    return TrainTriples(
        users=users[order],
        positives=pos_items[order],
        negatives=negatives[order],
        skipped_users=skipped,
    )


def sample_eval_negatives(
    split: InteractionSplit,
    count: int = 1000,
    repeat_seed: int = 0,
    *,
    users: Iterable[int] | None = None,
) -> dict[int, IntArray]:
    """Per-user candidate negatives, sorted, disjoint from all positives.

    Each user draws from its own ``default_rng([repeat_seed, user])``
    stream, so results do not depend on which other users are sampled.
    Users with at most ``count`` non-positive items get all of them.
    """
    positives = split.positives
    if users is None:
        users = split.held_out("test")
    result: dict[int, IntArray] = {}
    shortfall = 0
    for user in users:
        user = int(user)
        start, stop = positives.indptr[user], positives.indptr[user + 1]
        owned = positives.indices[start:stop].astype(np.int64)
        available = split.items - len(owned)
        if available <= count:
            result[user] = np.setdiff1d(
                np.arange(split.items, dtype=np.int64), owned
            )
            shortfall += available < count
            continue
        rng = np.random.default_rng([repeat_seed, user])
        offsets = np.sort(rng.choice(available, size=count, replace=False))
        adjusted = owned - np.arange(len(owned), dtype=np.int64)
        result[user] = offsets + np.searchsorted(adjusted, offsets, "right")
    if shortfall:
        logger.warning(
            "%d users have fewer than %d candidate negatives; "
            "using all of their unobserved items",
            shortfall,
            count,
        )
    return result


def _group_edges(boundaries: Sequence[int]) -> list[int]:
    if any(b <= a for a, b in zip(boundaries, boundaries[1:], strict=False)):
        raise ConfigError(
            "Group boundaries must be strictly increasing",
            context={"boundaries": list(boundaries)},
        )
    if boundaries and boundaries[0] < 0:
        raise ConfigError("Group boundaries must not be negative")
    if boundaries and boundaries[0] == 0:
        return list(boundaries)
    return [0, *boundaries]


def group_labels(boundaries: Sequence[int]) -> list[str]:
    """Bucket labels in ascending order, e.g. ``[0,8)`` to ``[64,∞)``."""
    edges = _group_edges(boundaries)
    labels = [f"[{a},{b})" for a, b in zip(edges, edges[1:], strict=False)]
    labels.append(f"[{edges[-1]},∞)")
    return labels


def sparsity_groups(
    split: InteractionSplit, boundaries: Sequence[int] = (8, 16, 32, 64)
) -> dict[int, str]:
    """Label every user by its training-rating count bucket.

    Buckets are left-closed: with boundaries ``[8, 16]`` a user with 8
    training ratings lands in ``[8,16)``.
    """
    labels = group_labels(boundaries)
    edges = np.asarray(_group_edges(boundaries), dtype=np.int64)
    bucket = np.searchsorted(edges, split.train_counts, side="right") - 1
    return {user: labels[int(b)] for user, b in enumerate(bucket)}
