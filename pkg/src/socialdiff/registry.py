"""Model variant plugin registry.

Variant classes are checked when they are registered: the slug must be
usable in config files and comma-separated command-line lists, and the
class must implement both the tape and the matrix form of a layer.
"""

import inspect
import logging
import re
from importlib.metadata import entry_points

from socialdiff.exceptions import VariantNotFoundError
from socialdiff.variant import BaseVariant

logger = logging.getLogger(__name__)

ENTRY_POINT_GROUP = "socialdiff.variants"
SLUG_PATTERN = re.compile(r"[a-z0-9][a-z0-9_-]*")


def _qualified(variant_class: type) -> str:
    return f"{variant_class.__module__}.{variant_class.__qualname__}"


def check_variant(variant_class: type[BaseVariant]) -> None:
    """Raise if ``variant_class`` cannot serve as a diffusion variant."""
    name = _qualified(variant_class)
    slug = variant_class.slug
    if not isinstance(slug, str) or not SLUG_PATTERN.fullmatch(slug):
        raise ValueError(
            f"Variant {name} has slug {slug!r}; slugs use lowercase "
            "letters, digits, '-' and '_'"
        )
    if not variant_class.display_name:
        raise ValueError(f"Variant {name} has no display name")
    if inspect.isabstract(variant_class):
        missing = ", ".join(sorted(variant_class.__abstractmethods__))
        raise TypeError(f"Variant {name} does not implement {missing}")


class VariantRegistry:
    """Discover and store model variant classes."""

    def __init__(self) -> None:
        self._variants: dict[str, type[BaseVariant]] = {}
        self._discovered = False

    def discover(self) -> None:
        """Load built-in variants and those published as entry points."""
        from socialdiff.variants import BUILTIN_VARIANTS

        for variant_class in BUILTIN_VARIANTS:
            self._register_variant(variant_class)
        for ep in entry_points(group=ENTRY_POINT_GROUP):
            variant_class = ep.load()
            if isinstance(variant_class, type) and issubclass(
                variant_class, BaseVariant
            ):
                self._register_variant(variant_class)
            else:
                logger.warning(
                    "Entry point %r is not a variant class; skipped",
                    getattr(ep, "name", variant_class),
                )
        self._discovered = True

    def register(self, variant_class: type[BaseVariant]) -> None:
        """Register variant manually."""
        self._register_variant(variant_class)

    def unregister(self, slug: str) -> None:
        """Unregister variant by slug."""
        self._variants.pop(slug, None)

    def get_by_slug(self, slug: str) -> type[BaseVariant]:
        """Get variant class by slug."""
        self._ensure_discovered()
        try:
            return self._variants[str(slug)]
        except KeyError:
            raise VariantNotFoundError(
                str(slug), context={"available": sorted(self._variants)}
            ) from None

    def get_choices(self) -> list[tuple[str, str]]:
        """Get variant slug/display pairs for user-facing selection."""
        self._ensure_discovered()
        return [
            (v.slug, v.display_name)
            for v in self._variants.values()
            if v.user_selectable
        ]

    def _ensure_discovered(self) -> None:
        if not self._discovered:
            self.discover()

    def _register_variant(self, variant_class: type[BaseVariant]) -> None:
        check_variant(variant_class)
        slug = variant_class.slug
        existing = self._variants.get(slug)
        if existing is not None and existing is not variant_class:
            raise ValueError(
                f"Duplicate variant slug {slug!r}: "
                f"{_qualified(existing)} and {_qualified(variant_class)}"
            )
        self._variants[slug] = variant_class
        logger.debug("Registered variant %s", slug)


registry = VariantRegistry()
