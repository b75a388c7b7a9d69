"""Raw input loader tests."""

from pathlib import Path

import numpy as np
import pytest

from socialdiff.exceptions import DataError, MalformedRowError
from socialdiff.loaders import (
    ColumnSpec,
    load_features,
    load_interactions,
    load_social_links,
)


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadInteractions:
    def test_parses_and_deduplicates(self, tmp_path: Path) -> None:
        path = write(
            tmp_path / "ratings.tsv",
            "u1\ti1\t5\nu1\ti2\t3\tignored\n\nu1\ti1\t1\nu2\ti1\t4\n",
        )
        interactions = load_interactions(path)
        assert interactions.records == [
            ("u1", "i1", 5),
            ("u1", "i2", 3),
            ("u2", "i1", 4),
        ]
        assert interactions.duplicates == 1
        assert interactions.malformed == 0

    def test_malformed_row_reports_row_number(self, tmp_path: Path) -> None:
        path = write(tmp_path / "r.tsv", "u1\ti1\t5\nu2\ti2\tfive\n")
        with pytest.raises(MalformedRowError) as excinfo:
            load_interactions(path)
        assert excinfo.value.row == 2
        assert excinfo.value.path == str(path)

    def test_malformed_rows_within_tolerance(self, tmp_path: Path) -> None:
        path = write(tmp_path / "r.tsv", "u1\ti1\t5\nu2\ti2\nu3\ti3\t2.5\n")
        interactions = load_interactions(path, max_malformed=2)
        assert len(interactions) == 1
        assert interactions.malformed == 2

    def test_one_past_tolerance_names_that_row(self, tmp_path: Path) -> None:
        path = write(tmp_path / "r.tsv", "bad\nu1\ti1\t5\nworse\n")
        with pytest.raises(MalformedRowError) as excinfo:
            load_interactions(path, max_malformed=1)
        assert excinfo.value.row == 3

    def test_custom_columns(self, tmp_path: Path) -> None:
        path = write(tmp_path / "r.csv", "4,i9,u7\n")
        spec = ColumnSpec(user=2, item=1, rating=0, separator=",")
        assert load_interactions(path, spec).records == [("u7", "i9", 4)]

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(DataError, match="does not exist"):
            load_interactions(tmp_path / "absent.tsv")


class TestLoadSocialLinks:
    def test_drops_self_links_and_duplicates(self, tmp_path: Path) -> None:
        path = write(tmp_path / "links.tsv", "a\tb\na\ta\na\tb\nb\ta\n")
        links = load_social_links(path)
        assert links.records == [("a", "b"), ("b", "a")]
        assert links.self_links == 1
        assert links.duplicates == 1

    def test_missing_column(self, tmp_path: Path) -> None:
        path = write(tmp_path / "links.tsv", "a\tb\nc\n")
        with pytest.raises(MalformedRowError):
            load_social_links(path)


class TestLoadFeatures:
    def test_aligns_to_id_map(self, tmp_path: Path) -> None:
        path = write(
            tmp_path / "f.tsv", "u2\t1.0,2.0\nu1\t3.0,4.0\nghost\t0,0\n"
        )
        table = load_features(path, {"u1": 0, "u2": 1, "u3": 2})
        np.testing.assert_array_equal(
            table.matrix, [[3.0, 4.0], [1.0, 2.0], [0.0, 0.0]]
        )
        assert table.missing == 1
        assert table.dropped == 1
        assert table.width == 2
        assert table.ids == ("u1", "u2", "u3")

    def test_width_mismatch(self, tmp_path: Path) -> None:
        path = write(tmp_path / "f.tsv", "u1\t1,2\nu2\t1,2,3\n")
        with pytest.raises(MalformedRowError, match="width"):
            load_features(path, {"u1": 0, "u2": 1})

    def test_unparseable_value(self, tmp_path: Path) -> None:
        path = write(tmp_path / "f.tsv", "u1\t1,x\n")
        with pytest.raises(MalformedRowError, match="unparseable"):
            load_features(path, {"u1": 0})

    def test_standardize(self, tmp_path: Path) -> None:
        path = write(tmp_path / "f.tsv", "a\t1,5\nb\t3,5\n")
        table = load_features(path, {"a": 0, "b": 1}, standardize=True)
        np.testing.assert_allclose(table.matrix, [[-1.0, 0.0], [1.0, 0.0]])
