"""Variant registry tests."""

import importlib
from collections.abc import Mapping
from typing import Any

import pytest

from socialdiff.autodiff import Tape, Tensor
from socialdiff.exceptions import ConfigError, VariantNotFoundError
from socialdiff.graph import HeteroGraph
from socialdiff.model import DiffusionModel, ModelConfig
from socialdiff.registry import VariantRegistry, registry
from socialdiff.variant import (
    Array,
    BaseVariant,
    EdgeIndex,
    LayerOutput,
    MatrixLayer,
)
from socialdiff.variants import BPR, DiffNet, DiffNetPlusPlus


class FrozenVariant(BaseVariant):
    """Every layer repeats its input."""

    slug = "frozen"
    display_name = "Frozen"

    def propagate(
        self,
        tape: Tape,
        leaves: Mapping[str, Tensor],
        index: EdgeIndex,
        layer: int,
        users: Tensor,
        items: Tensor,
        previous: LayerOutput | None,
    ) -> LayerOutput:
        return LayerOutput(users=users, items=items)

    def propagate_matrix(
        self,
        params: Mapping[str, Array],
        index: EdgeIndex,
        layer: int,
        users: Array,
        items: Array,
        previous: MatrixLayer | None,
    ) -> MatrixLayer:
        return MatrixLayer(users=users, items=items)


class ClashingVariant(FrozenVariant):
    slug = "frozen"
    display_name = "Clashing"


class HiddenVariant(FrozenVariant):
    slug = "hidden"
    display_name = "Hidden"
    user_selectable = False


class EP:
    def __init__(self, loaded: Any) -> None:
        self._loaded = loaded

    def load(self) -> Any:
        return self._loaded


def patch_entry_points(
    monkeypatch: pytest.MonkeyPatch, *loaded: Any
) -> None:
    registry_module = importlib.import_module("socialdiff.registry")
    monkeypatch.setattr(
        registry_module,
        "entry_points",
        lambda group: [EP(item) for item in loaded],
    )


def test_register_get_unregister_cycle() -> None:
    reg = VariantRegistry()
    reg._discovered = True

    reg.register(FrozenVariant)

    assert reg.get_by_slug("frozen") is FrozenVariant
    assert reg.get_choices() == [("frozen", "Frozen")]

    reg.unregister("frozen")

    with pytest.raises(VariantNotFoundError) as excinfo:
        reg.get_by_slug("frozen")
    assert excinfo.value.slug == "frozen"


def test_missing_variant_is_a_config_error() -> None:
    with pytest.raises(ConfigError, match="'gcn' is not registered"):
        VariantRegistry().get_by_slug("gcn")


def test_register_duplicate_slug_raises() -> None:
    reg = VariantRegistry()
    reg.register(FrozenVariant)

    with pytest.raises(ValueError, match="Duplicate variant slug"):
        reg.register(ClashingVariant)


def test_reregister_same_class_is_idempotent() -> None:
    reg = VariantRegistry()
    reg.register(FrozenVariant)
    reg.register(FrozenVariant)

    assert reg.get_by_slug("frozen") is FrozenVariant


def test_builtin_variants_are_discoverable() -> None:
    reg = VariantRegistry()

    assert reg._discovered is False
    assert reg.get_by_slug("diffnetpp") is DiffNetPlusPlus
    assert reg._discovered is True
    assert reg.get_choices() == [
        ("diffnetpp", "DiffNet++"),
        ("diffnet", "DiffNet"),
        ("bpr", "BPR"),
    ]
    assert reg.get_by_slug("diffnet") is DiffNet
    assert reg.get_by_slug("bpr") is BPR


def test_discover_uses_entry_points(monkeypatch: pytest.MonkeyPatch) -> None:
    patch_entry_points(monkeypatch, FrozenVariant)

    reg = VariantRegistry()
    reg.discover()

    assert reg.get_by_slug("frozen") is FrozenVariant


def test_entry_points_skip_foreign_objects(
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    class NotAVariant:
        slug = "bad"

    patch_entry_points(monkeypatch, NotAVariant, "not-a-class", 42)

    reg = VariantRegistry()
    reg.discover()

    slugs = [slug for slug, _ in reg.get_choices()]
    assert slugs == ["diffnetpp", "diffnet", "bpr"]


def test_hidden_variant_excluded_from_choices() -> None:
    reg = VariantRegistry()
    reg._discovered = True
    reg.register(FrozenVariant)
    reg.register(HiddenVariant)

    assert reg.get_choices() == [("frozen", "Frozen")]
    assert reg.get_by_slug("hidden") is HiddenVariant


def test_unregister_nonexistent_slug_is_silent() -> None:
    VariantRegistry().unregister("nonexistent")


def test_model_resolves_variant_through_registry(graph: HeteroGraph) -> None:
    reg = VariantRegistry()
    reg.register(FrozenVariant)
    model = DiffusionModel(
        ModelConfig(variant="frozen", dim=2, depth=2), graph, registry=reg
    )
    params = model.init_parameters(0)

    state = model.forward(params)

    assert set(params) == {"P", "Q"}
    assert all((layer == params.P).all() for layer in state.users)


def test_global_registry_is_reset_between_tests() -> None:
    assert registry._variants == {}
    assert registry._discovered is False


class HalfVariant(BaseVariant):
    """Implements the tape form only."""

    slug = "half"
    display_name = "Half"

    def propagate(
        self,
        tape: Tape,
        leaves: Mapping[str, Tensor],
        index: EdgeIndex,
        layer: int,
        users: Tensor,
        items: Tensor,
        previous: LayerOutput | None,
    ) -> LayerOutput:
        return LayerOutput(users=users, items=items)


class ShadowingVariant(FrozenVariant):
    slug = "shadowing"
    display_name = "Shadowing"

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        return {"P": (1, 1), "extra": (2,)}


@pytest.mark.parametrize("slug", ["", "Frozen", "two words", "a,b", "-x"])
def test_register_rejects_unusable_slugs(slug: str) -> None:
    bad = type("BadSlug", (FrozenVariant,), {"slug": slug})

    with pytest.raises(ValueError, match="slugs use lowercase"):
        VariantRegistry().register(bad)


def test_register_requires_display_name() -> None:
    nameless = type(
        "Nameless", (FrozenVariant,), {"slug": "nameless", "display_name": ""}
    )

    with pytest.raises(ValueError, match="no display name"):
        VariantRegistry().register(nameless)


def test_register_requires_both_layer_forms() -> None:
    reg = VariantRegistry()

    with pytest.raises(TypeError, match="propagate_matrix"):
        reg.register(HalfVariant)
    assert "half" not in reg._variants


def test_discover_rejects_broken_entry_point(
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    patch_entry_points(monkeypatch, HalfVariant)

    with pytest.raises(TypeError, match="does not implement"):
        VariantRegistry().discover()


def test_model_rejects_reserved_parameter_names(graph: HeteroGraph) -> None:
    reg = VariantRegistry()
    reg.register(ShadowingVariant)

    model = DiffusionModel(
        ModelConfig(variant="shadowing", dim=2, depth=1), graph, registry=reg
    )

    with pytest.raises(ConfigError, match="reserved parameter arrays: P"):
        model.parameter_shapes()
