"""Pluggable validation system.

Validators are callables that receive a config mapping, optionally
modify it, and return it. Raise ``ConfigError`` to reject.
"""

from collections.abc import Callable
from typing import Any

from socialdiff.enums import Variant
from socialdiff.exceptions import ConfigError

Validator = Callable[[dict[str, Any]], dict[str, Any]]

_POSITIVE_KEYS = {
    "data": ("min_ratings", "min_links"),
    "model": ("dim",),
    "train": (
        "learning_rate",
        "batch_size",
        "neg_ratio",
        "max_epochs",
        "validation_negatives",
    ),
    "eval": ("negatives", "repeats"),
}


def run_validators(
    data: dict[str, Any], validators: list[Validator] | None = None
) -> dict[str, Any]:
    """Run a chain of validators on data.

    Each validator receives the data dict and must return it
    (possibly modified). Raise an exception to reject.
    """
    for validator in validators or []:
        data = validator(data)
    return data


def check_positive_numbers(data: dict[str, Any]) -> dict[str, Any]:
    for section, keys in _POSITIVE_KEYS.items():
        values = data.get(section, {})
        for key in keys:
            value = values.get(key)
            if value is not None and not value > 0:
                raise ConfigError(
                    f"{section}.{key} must be positive",
                    context={"value": value},
                )
    threads = data.get("threads")
    if threads is not None and threads < 1:
        raise ConfigError("threads must be at least 1")
    for name, seed in data.get("seeds", {}).items():
        if seed < 0:
            raise ConfigError(f"seeds.{name} must not be negative")
    return data


def check_patience(data: dict[str, Any]) -> dict[str, Any]:
    patience = data.get("train", {}).get("patience")
    if patience is not None and patience < 1:
        raise ConfigError(
            "train.patience must be at least 1", context={"value": patience}
        )
    return data


def check_group_boundaries(data: dict[str, Any]) -> dict[str, Any]:
    groups = list(data.get("eval", {}).get("groups") or [])
    if any(b <= a for a, b in zip(groups, groups[1:], strict=False)):
        raise ConfigError(
            "eval.groups must be strictly increasing",
            context={"groups": groups},
        )
    return data


def check_feature_paths(data: dict[str, Any]) -> dict[str, Any]:
    """Feature flags need the matching feature file."""
    model, paths = data.get("model", {}), data.get("paths", {})
    for flag, path in (
        ("use_user_features", "user_features"),
        ("use_item_features", "item_features"),
    ):
        if model.get(flag) and not paths.get(path):
            raise ConfigError(
                f"model.{flag} is on but paths.{path} is not set"
            )
    return data


def force_bpr_depth(data: dict[str, Any]) -> dict[str, Any]:
    model = data.get("model", {})
    if model.get("variant") == Variant.BPR and model.get("depth"):
        model["depth"] = 0
    return data


DEFAULT_VALIDATORS: list[Validator] = [
    check_positive_numbers,
    check_patience,
    check_group_boundaries,
    check_feature_paths,
    force_bpr_depth,
]
