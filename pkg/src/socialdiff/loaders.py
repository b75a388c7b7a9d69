"""Raw rating, link and feature file loaders.

All inputs are UTF-8 TSV files:

- ratings: ``user_id<TAB>item_id<TAB>rating`` (integer), trailing columns
  ignored
- links: ``follower_id<TAB>followee_id``
- features: ``id<TAB>f1,f2,...,fd``
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from socialdiff.exceptions import DataError, MalformedRowError

logger = logging.getLogger(__name__)

RATING_COLUMNS = ("user", "item", "rating")
LINK_COLUMNS = ("follower", "followee")


@dataclass(frozen=True)
class ColumnSpec:
    """Where the user, item and rating columns sit in a ratings file."""

    user: int = 0
    item: int = 1
    rating: int = 2
    separator: str = "\t"

    @property
    def width(self) -> int:
        return max(self.user, self.item, self.rating) + 1


TSV = ColumnSpec()


@dataclass(frozen=True)
class InteractionSet:
    """Deduplicated (raw user, raw item, integer rating) records."""

    frame: pd.DataFrame
    malformed: int = 0
    duplicates: int = 0

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def records(self) -> list[tuple[str, str, int]]:
        return [
            (str(u), str(i), int(r))
            for u, i, r in self.frame.itertuples(index=False, name=None)
        ]

    @classmethod
    def from_records(
        cls, records: Sequence[tuple[str, str, int]]
    ) -> InteractionSet:
        frame = pd.DataFrame(list(records), columns=list(RATING_COLUMNS))
        return cls(*_dedup_ratings(frame))


@dataclass(frozen=True)
class SocialLinkSet:
    """Deduplicated directed (follower, followee) records, no self-links."""

    frame: pd.DataFrame
    malformed: int = 0
    duplicates: int = 0
    self_links: int = 0

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def records(self) -> list[tuple[str, str]]:
        return [
            (str(a), str(b))
            for a, b in self.frame.itertuples(index=False, name=None)
        ]

    @classmethod
    def from_records(cls, records: Sequence[tuple[str, str]]) -> SocialLinkSet:
        frame = pd.DataFrame(list(records), columns=list(LINK_COLUMNS))
        frame, self_links, duplicates = _clean_links(frame)
        return cls(frame, duplicates=duplicates, self_links=self_links)


@dataclass(frozen=True)
class FeatureTable:
    """Feature matrix aligned to a dense id vocabulary."""

    matrix: NDArray[np.float64]
    missing: int = 0
    dropped: int = 0
    ids: tuple[str, ...] = field(default=(), repr=False)

    @property
    def width(self) -> int:
        return int(self.matrix.shape[1])


def _read_lines(path: str | Path) -> pd.Series:
    path = Path(path)
    if not path.is_file():
        raise DataError(
            f"Input file {str(path)!r} does not exist",
            context={"path": str(path)},
        )
    lines = pd.Series(
        path.read_text(encoding="utf-8").splitlines(), dtype="object"
    )
    lines.index = pd.RangeIndex(1, len(lines) + 1)
    return lines[lines.str.strip() != ""]


def _split_columns(
    lines: pd.Series, separator: str, width: int
) -> pd.DataFrame:
    parts = lines.str.split(separator, expand=True)
    for column in range(parts.shape[1], width):
        parts[column] = None
    return parts


def _check_tolerance(
    path: str | Path, bad_rows: pd.Index, reason: str, tolerance: int
) -> None:
    if len(bad_rows) > tolerance:
        row = int(bad_rows[tolerance])
        raise MalformedRowError(
            str(path),
            row,
            reason,
            context={"malformed": len(bad_rows), "tolerance": tolerance},
        )
    if len(bad_rows):
        logger.warning(
            "%s: skipped %d malformed rows (first at row %d)",
            path,
            len(bad_rows),
            int(bad_rows[0]),
        )


def _dedup_ratings(frame: pd.DataFrame) -> tuple[pd.DataFrame, int, int]:
    before = len(frame)
    frame = frame.drop_duplicates(subset=["user", "item"], keep="first")
    frame = frame.reset_index(drop=True)
    frame["rating"] = frame["rating"].astype(np.int64)
    return frame, 0, before - len(frame)


def _clean_links(frame: pd.DataFrame) -> tuple[pd.DataFrame, int, int]:
    is_self = frame["follower"] == frame["followee"]
    self_links = int(is_self.sum())
    if self_links:
        logger.warning("Dropped %d self-links", self_links)
    frame = frame[~is_self]
    before = len(frame)
    frame = frame.drop_duplicates(keep="first").reset_index(drop=True)
    return frame, self_links, before - len(frame)


def load_interactions(
    path: str | Path, spec: ColumnSpec = TSV, *, max_malformed: int = 0
) -> InteractionSet:
    """Parse a ratings file into deduplicated interaction records.

    Rows with missing columns or a non-integer rating are malformed; more
    than ``max_malformed`` of them aborts with the offending row number.
    Duplicate (user, item) pairs keep their first rating.
    """
    lines = _read_lines(path)
    if lines.empty:
        return InteractionSet.from_records([])
    parts = _split_columns(lines, spec.separator, spec.width)
    frame = pd.DataFrame(
        {
            "user": parts[spec.user],
            "item": parts[spec.item],
            "rating": parts[spec.rating],
        },
        index=parts.index,
    )
    numeric = pd.to_numeric(frame["rating"], errors="coerce")
    bad = (
        frame["user"].isna()
        | frame["item"].isna()
        | (frame["user"].str.strip() == "")
        | (frame["item"].str.strip() == "")
        | numeric.isna()
        | ~np.isfinite(numeric.fillna(0.5))
        | (numeric.fillna(0.5) % 1 != 0)
    )
    _check_tolerance(
        path,
        frame.index[bad],
        "expected user, item, integer rating",
        max_malformed,
    )
    frame = frame[~bad].assign(
        user=frame["user"][~bad].str.strip(),
        item=frame["item"][~bad].str.strip(),
        rating=numeric[~bad],
    )
    frame = frame.reset_index(drop=True)
    frame, _, duplicates = _dedup_ratings(frame)
    logger.info(
        "Loaded %d interactions from %s (%d duplicates, %d malformed)",
        len(frame),
        path,
        duplicates,
        int(bad.sum()),
    )
    return InteractionSet(
        frame, malformed=int(bad.sum()), duplicates=duplicates
    )


def load_social_links(
    path: str | Path, *, separator: str = "\t", max_malformed: int = 0
) -> SocialLinkSet:
    """Parse a links file; a row ``a b`` means ``a`` follows ``b``."""
    lines = _read_lines(path)
    if lines.empty:
        return SocialLinkSet.from_records([])
    parts = _split_columns(lines, separator, 2)
    frame = pd.DataFrame(
        {"follower": parts[0], "followee": parts[1]}, index=parts.index
    )
    bad = (
        frame["follower"].isna()
        | frame["followee"].isna()
        | (frame["follower"].str.strip() == "")
        | (frame["followee"].str.strip() == "")
    )
    _check_tolerance(
        path, frame.index[bad], "expected follower, followee", max_malformed
    )
    frame = pd.DataFrame(
        {
            "follower": frame["follower"][~bad].str.strip(),
            "followee": frame["followee"][~bad].str.strip(),
        }
    ).reset_index(drop=True)
    frame, self_links, duplicates = _clean_links(frame)
    logger.info(
        "Loaded %d social links from %s (%d self-links, %d duplicates)",
        len(frame),
        path,
        self_links,
        duplicates,
    )
    return SocialLinkSet(
        frame,
        malformed=int(bad.sum()),
        duplicates=duplicates,
        self_links=self_links,
    )


def load_features(
    path: str | Path,
    id_map: Mapping[str, int],
    *,
    standardize: bool = False,
) -> FeatureTable:
    """Read a feature file into a matrix aligned to ``id_map``.

    Rows for ids outside ``id_map`` are dropped; ids with no row get a
    zero vector and are counted as missing.
    """
    lines = _read_lines(path)
    parts = _split_columns(lines, "\t", 2)
    width: int | None = None
    rows: dict[int, NDArray[np.float64]] = {}
    dropped = 0
    for row, raw_id, raw_values in parts[[0, 1]].itertuples(name=None):
        if pd.isna(raw_id) or pd.isna(raw_values):
            raise MalformedRowError(
                str(path), int(row), "expected id and vector"
            )
        try:
            values = np.array(
                [float(v) for v in str(raw_values).split(",")],
                dtype=np.float64,
            )
        except ValueError as exc:
            raise MalformedRowError(
                str(path), int(row), f"unparseable vector: {exc}"
            ) from exc
        if width is None:
            width = values.size
        elif values.size != width:
            raise MalformedRowError(
                str(path),
                int(row),
                f"vector width {values.size} differs from {width}",
                context={"expected": width, "found": values.size},
            )
        if not np.all(np.isfinite(values)):
            raise MalformedRowError(str(path), int(row), "non-finite value")
        index = id_map.get(str(raw_id).strip())
        if index is None:
            dropped += 1
            continue
        rows[index] = values

    matrix = np.zeros((len(id_map), width or 0), dtype=np.float64)
    for index, values in rows.items():
        matrix[index] = values
    missing = len(id_map) - len(rows)
    if missing:
        logger.warning(
            "%s: %d ids have no feature row; using zero vectors", path, missing
        )
    if standardize and matrix.size:
        std = matrix.std(axis=0)
        matrix = (matrix - matrix.mean(axis=0)) / np.where(std > 0, std, 1.0)
    ordered = sorted(id_map, key=id_map.__getitem__)
    return FeatureTable(
        matrix, missing=missing, dropped=dropped, ids=tuple(ordered)
    )
