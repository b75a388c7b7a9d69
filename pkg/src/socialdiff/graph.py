"""Preprocessed social/interest graph and its on-disk form."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import scipy.sparse as sp
from numpy.typing import NDArray

from socialdiff.exceptions import DataError, EmptyGraphError
from socialdiff.loaders import InteractionSet, SocialLinkSet
from socialdiff.types import DatasetStats

logger = logging.getLogger(__name__)

IntArray = NDArray[np.int64]

RATINGS_FILE = "ratings.tsv"
LINKS_FILE = "links.tsv"
USER_IDS_FILE = "user_ids.tsv"
ITEM_IDS_FILE = "item_ids.tsv"
USER_FEATURES_FILE = "user_features.npy"
ITEM_FEATURES_FILE = "item_features.npy"
STATS_FILE = "stats.json"


def _binary_csr(
    rows: IntArray, cols: IntArray, shape: tuple[int, int]
) -> sp.csr_matrix:
    data = np.ones(len(rows), dtype=np.int8)
    matrix = sp.csr_matrix((data, (rows, cols)), shape=shape)
    matrix.sum_duplicates()
    matrix.data[:] = 1
    matrix.sort_indices()
    return matrix


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """Users, items, binary interest edges R and directed social edges S.

    Row ``a`` of ``S`` lists the users ``a`` follows. ``X`` and ``Y`` are
    the optional user and item feature matrices.
    """

    R: sp.csr_matrix
    S: sp.csr_matrix
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    X: NDArray[np.float64] | None = field(default=None, repr=False)
    Y: NDArray[np.float64] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        M, N = len(self.user_ids), len(self.item_ids)
        if self.R.shape != (M, N) or self.S.shape != (M, M):
            raise DataError(
                "Adjacency shapes do not match the id vocabularies",
                context={"R": self.R.shape, "S": self.S.shape, "M": M, "N": N},
            )
        if self.X is not None and self.X.shape[0] != M:
            raise DataError(
                f"User feature matrix has {self.X.shape[0]} rows, expected {M}"
            )
        if self.Y is not None and self.Y.shape[0] != N:
            raise DataError(
                f"Item feature matrix has {self.Y.shape[0]} rows, expected {N}"
            )

    @classmethod
    def from_edges(
        cls,
        users: int,
        items: int,
        interest: IntArray,
        social: IntArray | None = None,
        *,
        user_ids: tuple[str, ...] | None = None,
        item_ids: tuple[str, ...] | None = None,
        X: NDArray[np.float64] | None = None,
        Y: NDArray[np.float64] | None = None,
    ) -> HeteroGraph:
        """Build a graph from dense-index ``(user, item)`` and
        ``(follower, followee)`` pair arrays."""
        interest = np.asarray(interest, dtype=np.int64).reshape(-1, 2)
        social_pairs = (
            np.zeros((0, 2), dtype=np.int64)
            if social is None
            else np.asarray(social, dtype=np.int64).reshape(-1, 2)
        )
        if np.any(social_pairs[:, 0] == social_pairs[:, 1]):
            raise DataError("Social edges must not contain self-links")
        return cls(
            R=_binary_csr(interest[:, 0], interest[:, 1], (users, items)),
            S=_binary_csr(
                social_pairs[:, 0], social_pairs[:, 1], (users, users)
            ),
            user_ids=user_ids or tuple(str(a) for a in range(users)),
            item_ids=item_ids or tuple(str(i) for i in range(items)),
            X=X,
            Y=Y,
        )

    @property
    def M(self) -> int:
        return len(self.user_ids)

    @property
    def N(self) -> int:
        return len(self.item_ids)

    @property
    def num_ratings(self) -> int:
        return int(self.R.nnz)

    @property
    def num_links(self) -> int:
        return int(self.S.nnz)

    @cached_property
    def interest_edges(self) -> IntArray:
        """``(user, item)`` pairs in row-major order."""
        coo = self.R.tocoo()
        return np.stack([coo.row, coo.col], axis=1).astype(np.int64)

    @cached_property
    def social_edges(self) -> IntArray:
        """``(follower, followee)`` pairs in row-major order."""
        coo = self.S.tocoo()
        return np.stack([coo.row, coo.col], axis=1).astype(np.int64)

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {raw: index for index, raw in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {raw: index for index, raw in enumerate(self.item_ids)}

    def rated_items(self, user: int) -> IntArray:
        """R_a: items the user interacted with."""
        return self.R.indices[self.R.indptr[user] : self.R.indptr[user + 1]]

    def followees(self, user: int) -> IntArray:
        """S_a: users the user follows."""
        return self.S.indices[self.S.indptr[user] : self.S.indptr[user + 1]]

    def raters(self, item: int) -> IntArray:
        """R_i: users who interacted with the item."""
        column = self.R.tocsc()
        return column.indices[column.indptr[item] : column.indptr[item + 1]]

    def restrict(self, pairs: IntArray) -> HeteroGraph:
        """The same users, items and social edges with R limited to
        ``pairs``."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return replace(
            self, R=_binary_csr(pairs[:, 0], pairs[:, 1], (self.M, self.N))
        )

    def with_features(
        self,
        X: NDArray[np.float64] | None = None,
        Y: NDArray[np.float64] | None = None,
    ) -> HeteroGraph:
        return replace(
            self,
            X=X if X is not None else self.X,
            Y=Y if Y is not None else self.Y,
        )

    def stats(self) -> DatasetStats:
        M, N = self.M, self.N
        return DatasetStats(
            users=M,
            items=N,
            ratings=self.num_ratings,
            links=self.num_links,
            rating_density=self.num_ratings / (M * N) if M and N else 0.0,
            link_density=self.num_links / (M * M) if M else 0.0,
            user_features=self.X is not None,
            item_features=self.Y is not None,
        )

    def to_sources(
        self, positive_rating: int = 5
    ) -> tuple[InteractionSet, SocialLinkSet]:
        """Raw-id records that ``preprocess`` maps back onto this graph."""
        users = np.asarray(self.user_ids, dtype=object)
        items = np.asarray(self.item_ids, dtype=object)
        interest, social = self.interest_edges, self.social_edges
        ratings = pd.DataFrame(
            {
                "user": users[interest[:, 0]],
                "item": items[interest[:, 1]],
                "rating": np.full(len(interest), positive_rating, np.int64),
            }
        )
        links = pd.DataFrame(
            {"follower": users[social[:, 0]], "followee": users[social[:, 1]]}
        )
        return InteractionSet(ratings), SocialLinkSet(links)

    def write_id_maps(self, directory: str | Path) -> None:
        """Write ``raw_id<TAB>dense_index`` audit files."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, ids in (
            (USER_IDS_FILE, self.user_ids),
            (ITEM_IDS_FILE, self.item_ids),
        ):
            frame = pd.DataFrame({"raw_id": ids, "index": range(len(ids))})
            frame.to_csv(
                directory / name,
                sep="\t",
                header=False,
                index=False,
                lineterminator="\n",
            )


def _filter_to_fixed_point(
    ratings: pd.DataFrame,
    links: pd.DataFrame,
    min_ratings: int,
    min_links: int,
) -> tuple[pd.DataFrame, pd.DataFrame, int]:
    passes = 0
    while True:
        passes += 1
        user_ratings = ratings["user"].value_counts()
        item_ratings = ratings["item"].value_counts()
        candidates = pd.Index(ratings["user"]).union(
            pd.Index(links["follower"])
        ).union(pd.Index(links["followee"]))
        rating_counts = user_ratings.reindex(candidates, fill_value=0)
        link_counts = (
            links["follower"].value_counts().reindex(candidates, fill_value=0)
        )
        keep_users = candidates[
            (rating_counts >= min_ratings).to_numpy()
            & (link_counts >= min_links).to_numpy()
        ]
        keep_items = item_ratings.index[item_ratings >= min_ratings]

        next_ratings = ratings[
            ratings["user"].isin(keep_users) & ratings["item"].isin(keep_items)
        ]
        next_links = links[
            links["follower"].isin(keep_users)
            & links["followee"].isin(keep_users)
        ]
        if len(next_ratings) == len(ratings) and len(next_links) == len(links):
            return next_ratings, next_links, passes
        ratings, links = next_ratings, next_links


def preprocess(
    interactions: InteractionSet,
    links: SocialLinkSet,
    *,
    min_ratings: int = 2,
    min_links: int = 2,
    positive_threshold: int = 3,
) -> HeteroGraph:
    """Binarize, filter to a fixed point and assign dense indices.

    Ratings strictly above ``positive_threshold`` become edges; the rest
    are dropped. Users need ``min_ratings`` positive ratings and
    ``min_links`` outgoing links among surviving users; items need
    ``min_ratings`` positive ratings. Removal repeats until nothing
    changes. Dense indices follow the sorted raw ids.
    """
    if not len(interactions) or not len(links):
        raise EmptyGraphError(
            "Preprocessing needs non-empty ratings and links",
            context={"ratings": len(interactions), "links": len(links)},
        )
    ratings = interactions.frame
    positives = ratings.loc[ratings["rating"] > positive_threshold]
    positives = positives[["user", "item"]].astype(str)
    social = links.frame[["follower", "followee"]].astype(str)

    positives, social, passes = _filter_to_fixed_point(
        positives, social, min_ratings, min_links
    )
    users = sorted(
        set(positives["user"])
        | set(social["follower"])
        | set(social["followee"])
    )
    items = sorted(set(positives["item"]))
    if not users or not items or positives.empty:
        raise EmptyGraphError(
            "No users or items survive preprocessing",
            context={
                "min_ratings": min_ratings,
                "min_links": min_links,
                "positive_threshold": positive_threshold,
            },
        )
    user_index = {raw: index for index, raw in enumerate(users)}
    item_index = {raw: index for index, raw in enumerate(items)}
    interest = np.stack(
        [
            positives["user"].map(user_index).to_numpy(np.int64),
            positives["item"].map(item_index).to_numpy(np.int64),
        ],
        axis=1,
    )
    follows = np.stack(
        [
            social["follower"].map(user_index).to_numpy(np.int64),
            social["followee"].map(user_index).to_numpy(np.int64),
        ],
        axis=1,
    )
    graph = HeteroGraph.from_edges(
        len(users),
        len(items),
        interest,
        follows,
        user_ids=tuple(users),
        item_ids=tuple(items),
    )
    logger.info(
        "Preprocessed graph: %d users, %d items, %d ratings, %d links "
        "(%d filter passes)",
        graph.M,
        graph.N,
        graph.num_ratings,
        graph.num_links,
        passes,
    )
    return graph


def _write_pairs(path: Path, pairs: IntArray) -> None:
    pd.DataFrame(pairs).to_csv(
        path, sep="\t", header=False, index=False, lineterminator="\n"
    )


def _read_pairs(path: Path) -> IntArray:
    if not path.read_text(encoding="utf-8").strip():
        return np.zeros((0, 2), dtype=np.int64)
    frame = pd.read_csv(path, sep="\t", header=None, dtype=np.int64)
    return frame.to_numpy(np.int64).reshape(-1, 2)


def _read_ids(path: Path) -> tuple[str, ...]:
    frame = pd.read_csv(
        path, sep="\t", header=None, dtype=str, keep_default_na=False
    )
    return tuple(frame[0].tolist())


def save_graph(
    graph: HeteroGraph,
    directory: str | Path,
    *,
    extra_stats: Mapping[str, Any] | None = None,
) -> Path:
    """Write dense-index edge files, id maps, features and stats."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_pairs(directory / RATINGS_FILE, graph.interest_edges)
    _write_pairs(directory / LINKS_FILE, graph.social_edges)
    graph.write_id_maps(directory)
    for name, matrix in (
        (USER_FEATURES_FILE, graph.X),
        (ITEM_FEATURES_FILE, graph.Y),
    ):
        if matrix is not None:
            np.save(directory / name, matrix, allow_pickle=False)
    stats: dict[str, Any] = dict(graph.stats())
    stats.update(extra_stats or {})
    (directory / STATS_FILE).write_text(
        json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return directory


def load_graph(directory: str | Path) -> HeteroGraph:
    directory = Path(directory)
    required = (RATINGS_FILE, LINKS_FILE, USER_IDS_FILE, ITEM_IDS_FILE)
    missing = [name for name in required if not (directory / name).is_file()]
    if missing:
        raise DataError(
            f"Preprocessed graph in {str(directory)!r} is incomplete",
            context={"missing": missing},
        )
    user_ids = _read_ids(directory / USER_IDS_FILE)
    item_ids = _read_ids(directory / ITEM_IDS_FILE)
    X = Y = None
    if (directory / USER_FEATURES_FILE).is_file():
        X = np.load(directory / USER_FEATURES_FILE, allow_pickle=False)
    if (directory / ITEM_FEATURES_FILE).is_file():
        Y = np.load(directory / ITEM_FEATURES_FILE, allow_pickle=False)
    return HeteroGraph.from_edges(
        len(user_ids),
        len(item_ids),
        _read_pairs(directory / RATINGS_FILE),
        _read_pairs(directory / LINKS_FILE),
        user_ids=user_ids,
        item_ids=item_ids,
        X=X,
        Y=Y,
    )
