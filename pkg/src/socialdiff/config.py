"""Declarative run configuration.

A run is configured by one JSON document with the sections ``paths``,
``data``, ``model``, ``train``, ``eval`` and ``seeds`` plus a top-level
``threads`` count. Every key is optional. Command-line flags are applied
on top of the file through ``RunConfig.with_overrides``.
"""

from __future__ import annotations

import copy
import json
import logging
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from socialdiff.enums import SplitMode
from socialdiff.evaluation import EvalConfig
from socialdiff.exceptions import ConfigError
from socialdiff.model import ModelConfig
from socialdiff.training import TrainConfig
from socialdiff.validators import DEFAULT_VALIDATORS, Validator, run_validators

logger = logging.getLogger(__name__)

SECTIONS = ("paths", "data", "model", "train", "eval", "seeds")


def _strict(cls: type, section: str, data: Mapping[str, Any]) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(
            f"Unknown {section} settings: {', '.join(sorted(unknown))}"
        )
    return cls(**dict(data))


@dataclass(frozen=True)
class PathsConfig:
    ratings: str | None = None
    links: str | None = None
    user_features: str | None = None
    item_features: str | None = None
    workdir: str = "./workdir"


@dataclass(frozen=True)
class DataConfig:
    """Preprocessing filters and split fractions."""

    min_ratings: int = 2
    min_links: int = 2
    positive_threshold: int = 3
    test_frac: float = 0.1
    val_frac: float = 0.1
    split_mode: SplitMode = SplitMode.GLOBAL
    standardize_features: bool = False
    max_malformed: int = 0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "split_mode", SplitMode(self.split_mode))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 <= self.test_frac < 1 or not 0 <= self.val_frac < 1:
            raise ConfigError("Split fractions must lie in [0, 1)")
        if self.max_malformed < 0:
            raise ConfigError("data.max_malformed must not be negative")


@dataclass(frozen=True)
class SeedConfig:
    data: int = 0
    init: int = 0
    train: int = 0
    eval: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment run depends on."""

    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    threads: int = 1
    # Settings as written, before normalisation such as the BPR depth.
    requested: Mapping[str, Any] | None = field(
        default=None, compare=False, repr=False
    )

    @property
    def training(self) -> TrainConfig:
        """Training settings with the run's training seed applied."""
        return replace(self.train, seed=self.seeds.train)

    @property
    def evaluation(self) -> EvalConfig:
        return replace(self.eval, seed=self.seeds.eval)

    @property
    def workdir(self) -> Path:
        return Path(self.paths.workdir)

    @classmethod
    def from_mapping(
        cls,
        data: Mapping[str, Any],
        validators: list[Validator] | None = None,
    ) -> RunConfig:
        unknown = set(data) - {*SECTIONS, "threads"}
        if unknown:
            raise ConfigError(
                f"Unknown config sections: {', '.join(sorted(unknown))}"
            )
        resolved = run_validators(
            copy.deepcopy(dict(data)),
            DEFAULT_VALIDATORS if validators is None else validators,
        )
        train = dict(resolved.get("train", {}))
        train.pop("seed", None)
        evaluation = dict(resolved.get("eval", {}))
        evaluation.pop("seed", None)
        return cls(
            paths=_strict(PathsConfig, "paths", resolved.get("paths", {})),
            data=_strict(DataConfig, "data", resolved.get("data", {})),
            model=ModelConfig.from_mapping(resolved.get("model", {})),
            train=TrainConfig.from_mapping(train),
            eval=_strict(EvalConfig, "eval", evaluation),
            seeds=_strict(SeedConfig, "seeds", resolved.get("seeds", {})),
            threads=int(resolved.get("threads", 1)),
            requested=copy.deepcopy(dict(data)),
        )

    def to_mapping(self) -> dict[str, Any]:
        """Resolved snapshot; ``from_mapping`` rebuilds the same config."""
        data = asdict(self.data)
        data["split_mode"] = str(self.data.split_mode)
        train = self.train.to_mapping()
        train.pop("seed")
        evaluation = self.eval.to_mapping()
        evaluation.pop("seed")
        return {
            "paths": asdict(self.paths),
            "data": data,
            "model": self.model.to_mapping(),
            "train": train,
            "eval": evaluation,
            "seeds": asdict(self.seeds),
            "threads": self.threads,
        }

    def with_overrides(
        self,
        overrides: Mapping[str, Mapping[str, Any]],
        *,
        validators: list[Validator] | None = None,
    ) -> RunConfig:
        """Apply ``{section: {key: value}}`` updates; ``None`` values are
        ignored so unset command-line flags leave the file alone.

        Updates merge into the settings as written, so a value the earlier
        config normalised away comes back when its cause is overridden.
        """
        data = (
            self.to_mapping()
            if self.requested is None
            else copy.deepcopy(dict(self.requested))
        )
        for section, values in overrides.items():
            if section == "threads":
                if values is not None:
                    data["threads"] = values
                continue
            for key, value in values.items():
                if value is not None:
                    data.setdefault(section, {})[key] = value
        return RunConfig.from_mapping(data, validators)


def load_config(
    path: str | Path | None, validators: list[Validator] | None = None
) -> RunConfig:
    """Read a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig.from_mapping({}, validators)
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(
            f"Config file {str(path)!r} does not exist",
            context={"path": str(path)},
        ) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"Config file {str(path)!r} is not valid JSON: {exc.msg}",
            context={"path": str(path), "line": exc.lineno},
        ) from exc
    if not isinstance(raw, dict):
        raise ConfigError("Config file must hold a JSON object")
    logger.debug("Loaded config from %s", path)
    return RunConfig.from_mapping(raw, validators)


def seed_overrides(
    seed: int | None, raw: Mapping[str, Any] | None = None
) -> dict[str, int]:
    """``--seed`` sets every seed the config file leaves unset."""
    if seed is None:
        return {}
    explicit = dict((raw or {}).get("seeds", {}))
    return {
        name: seed
        for name in ("data", "init", "train", "eval")
        if name not in explicit
    }
