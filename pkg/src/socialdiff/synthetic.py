"""Synthetic datasets with planted social and interest structure.

The planted dataset splits users and items into blocks. Users mostly
follow users of their own block and mostly like mainstream items of
their own block. Every user also owns a favourite item, and part of each
user's likes are the favourites of the people they follow. A held-out
copied favourite is tied to its user only through the follow edge, so
the social graph carries signal the user's own history lacks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from socialdiff.exceptions import ConfigError
from socialdiff.graph import HeteroGraph, IntArray
from socialdiff.loaders import InteractionSet, SocialLinkSet

logger = logging.getLogger(__name__)

RATINGS_FILE = "ratings.tsv"
LINKS_FILE = "links.tsv"
USER_FEATURES_FILE = "user_features.tsv"
ITEM_FEATURES_FILE = "item_features.tsv"


@dataclass(frozen=True)
class PlantedConfig:
    users: int = 200
    items: int = 300
    blocks: int = 4
    positives_per_user: int = 25
    low_ratings_per_user: int = 5
    links_per_user: int = 8
    homophily: float = 0.8
    block_preference: float = 0.8
    copied_share: float = 0.3
    feature_dim: int = 8
    feature_noise: float = 0.5

    def __post_init__(self) -> None:
        if self.blocks < 1 or self.users < self.blocks:
            raise ConfigError("Need at least one user per block")
        if self.items < self.blocks:
            raise ConfigError("Need at least one item per block")
        if self.positives_per_user + self.low_ratings_per_user > self.items:
            raise ConfigError("Users cannot rate more items than exist")
        if self.links_per_user >= self.users:
            raise ConfigError("Users cannot follow more users than exist")
        for name in ("homophily", "block_preference", "copied_share"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class PlantedDataset:
    interactions: InteractionSet
    links: SocialLinkSet
    user_features: NDArray[np.float64]
    item_features: NDArray[np.float64]
    user_blocks: IntArray
    item_blocks: IntArray

    @property
    def user_ids(self) -> list[str]:
        return [_user_id(a) for a in range(len(self.user_blocks))]

    @property
    def item_ids(self) -> list[str]:
        return [_item_id(i) for i in range(len(self.item_blocks))]


def _user_id(index: int) -> str:
    return f"u{index:04d}"


def _item_id(index: int) -> str:
    return f"i{index:04d}"


def _pick(
    rng: np.random.Generator,
    pool: IntArray,
    count: int,
    exclude: set[int],
) -> list[int]:
    available = np.array([x for x in pool if x not in exclude], dtype=np.int64)
    count = min(count, len(available))
    return [int(x) for x in rng.choice(available, size=count, replace=False)]


def _block_mix(
    rng: np.random.Generator,
    own: IntArray,
    everything: IntArray,
    count: int,
    share: float,
    exclude: set[int],
) -> list[int]:
    in_block = int(rng.binomial(count, share))
    chosen = _pick(rng, own, in_block, exclude)
    chosen += _pick(rng, everything, count - len(chosen), exclude | set(chosen))
    return chosen


def _block_features(
    rng: np.random.Generator,
    blocks: IntArray,
    centers: NDArray[np.float64],
    noise: float,
) -> NDArray[np.float64]:
    shape = (len(blocks), centers.shape[1])
    return centers[blocks] + rng.normal(0.0, noise, size=shape)


def planted_dataset(
    config: PlantedConfig | None = None, seed: int = 0
) -> PlantedDataset:
    """Draw a planted-preference dataset; identical seeds give identical
    records."""
    config = config or PlantedConfig()
    rng = np.random.default_rng(seed)
    user_blocks = np.arange(config.users, dtype=np.int64) % config.blocks
    item_blocks = np.arange(config.items, dtype=np.int64) % config.blocks
    all_users = np.arange(config.users, dtype=np.int64)
    all_items = np.arange(config.items, dtype=np.int64)

    followees: list[list[int]] = []
    for user in range(config.users):
        own = np.flatnonzero(user_blocks == user_blocks[user])
        followees.append(
            _block_mix(
                rng,
                own,
                all_users,
                config.links_per_user,
                config.homophily,
                {user},
            )
        )

    # Each user owns a favourite item of their own block. Items past the
    # favourites form the mainstream pool that own tastes are drawn from.
    if config.items > config.users:
        favourites = all_users.copy()
        mainstream = all_items[config.users :]
    else:
        favourites = all_users % config.items
        mainstream = all_items
    copy_count = round(config.positives_per_user * config.copied_share)
    ratings: list[tuple[str, str, int]] = []
    for user in range(config.users):
        mine = {int(favourites[user])}
        sources = _pick(
            rng, np.array(followees[user], dtype=np.int64), copy_count, set()
        )
        mine.update(int(favourites[f]) for f in sources)
        own = mainstream[item_blocks[mainstream] == user_blocks[user]]
        mine.update(
            _block_mix(
                rng,
                own,
                mainstream,
                config.positives_per_user - len(mine),
                config.block_preference,
                mine,
            )
        )
        mine.update(
            _pick(rng, all_items, config.positives_per_user - len(mine), mine)
        )
        for item in sorted(mine):
            ratings.append(
                (_user_id(user), _item_id(item), int(rng.integers(4, 6)))
            )
        for item in _pick(rng, all_items, config.low_ratings_per_user, mine):
            ratings.append(
                (_user_id(user), _item_id(item), int(rng.integers(1, 4)))
            )

    links = [
        (_user_id(user), _user_id(followee))
        for user in range(config.users)
        for followee in followees[user]
    ]
    centers = (config.blocks, config.feature_dim)
    user_centers = rng.normal(0.0, 1.0, size=centers)
    item_centers = rng.normal(0.0, 1.0, size=centers)
    logger.info(
        "Planted %d ratings and %d links over %d users and %d items",
        len(ratings),
        len(links),
        config.users,
        config.items,
    )
    return PlantedDataset(
        interactions=InteractionSet.from_records(ratings),
        links=SocialLinkSet.from_records(links),
        user_features=_block_features(
            rng, user_blocks, user_centers, config.feature_noise
        ),
        item_features=_block_features(
            rng, item_blocks, item_centers, config.feature_noise
        ),
        user_blocks=user_blocks,
        item_blocks=item_blocks,
    )


def _write_features(
    path: Path, ids: list[str], matrix: NDArray[np.float64]
) -> None:
    vectors = [",".join(f"{v:.6f}" for v in row) for row in matrix]
    pd.DataFrame({"id": ids, "vector": vectors}).to_csv(
        path, sep="\t", header=False, index=False, lineterminator="\n"
    )


def write_planted(
    directory: str | Path,
    config: PlantedConfig | None = None,
    seed: int = 0,
) -> dict[str, Path]:
    """Write the planted dataset as the four raw TSV inputs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dataset = planted_dataset(config, seed)
    paths = {
        "ratings": directory / RATINGS_FILE,
        "links": directory / LINKS_FILE,
        "user_features": directory / USER_FEATURES_FILE,
        "item_features": directory / ITEM_FEATURES_FILE,
    }
    dataset.interactions.frame.to_csv(
        paths["ratings"],
        sep="\t",
        header=False,
        index=False,
        lineterminator="\n",
    )
    dataset.links.frame.to_csv(
        paths["links"], sep="\t", header=False, index=False, lineterminator="\n"
    )
    _write_features(
        paths["user_features"], dataset.user_ids, dataset.user_features
    )
    _write_features(
        paths["item_features"], dataset.item_ids, dataset.item_features
    )
    return paths


def random_graph(
    users: int,
    items: int,
    *,
    seed: int = 0,
    rating_prob: float = 0.3,
    link_prob: float = 0.3,
    user_features: int = 0,
    item_features: int = 0,
) -> HeteroGraph:
    """A small random graph for checks on individual layers.

    Every item gets at least one rater; users may end up with no
    ratings or no followees.
    """
    rng = np.random.default_rng(seed)
    rated = rng.random((users, items)) < rating_prob
    unrated = np.flatnonzero(~rated.any(axis=0))
    rated[rng.integers(0, users, size=len(unrated)), unrated] = True
    follows = rng.random((users, users)) < link_prob
    np.fill_diagonal(follows, False)
    return HeteroGraph.from_edges(
        users,
        items,
        np.argwhere(rated),
        np.argwhere(follows),
        X=rng.normal(size=(users, user_features)) if user_features else None,
        Y=rng.normal(size=(items, item_features)) if item_features else None,
    )
