"""Trainable parameter arrays, gradient bundles and checkpoint files.

Checkpoint layout (all integers little-endian):

- header: magic ``SDCK``, format version, M, N, D, K, d1, d2, H,
  variant code, node attention code, graph attention code, flag bits,
  hidden activation code, seed, array count
- per array, in declared order: name length, UTF-8 name, rank, dims,
  then the values as little-endian 32-bit floats
"""

from __future__ import annotations

import struct
from collections.abc import Iterator, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from socialdiff.enums import (
    Activation,
    AttentionMode,
    GammaInput,
    Readout,
    Variant,
)
from socialdiff.exceptions import CheckpointError

Array = NDArray[Any]

MAGIC = b"SDCK"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sH7I5Bq I")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")

_VARIANT_CODES = {variant: code for code, variant in enumerate(Variant)}
_ATTENTION_CODES = {mode: code for code, mode in enumerate(AttentionMode)}
_ACTIVATION_CODES = {kind: code for code, kind in enumerate(Activation)}

_FLAG_SHARE = 1
_FLAG_GAMMA_PREVIOUS = 2
_FLAG_READOUT_LAST = 4
_FLAG_USER_FEATURES = 8
_FLAG_ITEM_FEATURES = 16


class _ArrayBundle(Mapping[str, Array]):
    """Ordered name → array mapping shared by parameters and gradients."""

    __slots__ = ("_arrays",)

    def __init__(self, arrays: Mapping[str, Array]) -> None:
        self._arrays: dict[str, Array] = dict(arrays)

    def __getitem__(self, name: str) -> Array:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self._arrays.items())
        return f"{type(self).__name__}({shapes})"

    @property
    def size(self) -> int:
        return sum(int(a.size) for a in self._arrays.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: tuple(a.shape) for name, a in self._arrays.items()}

    def squared_norm(self) -> float:
        return float(sum(np.sum(a * a) for a in self._arrays.values()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self._arrays.values())


class ParameterSet(_ArrayBundle):
    """All trainable arrays of one model, in declaration order.

    ``P`` and ``Q`` are the free user and item embeddings; ``W1`` and
    ``W2`` the feature fusion transforms when features are in use; the
    remaining arrays belong to the attention perceptrons or to the
    variant's layer transforms.
    """

    @property
    def P(self) -> Array:
        return self["P"]

    @property
    def Q(self) -> Array:
        return self["Q"]

    @property
    def W1(self) -> Array | None:
        return self._arrays.get("W1")

    @property
    def W2(self) -> Array | None:
        return self._arrays.get("W2")

    @property
    def dtype(self) -> np.dtype[Any]:
        return self["P"].dtype

    def copy(self) -> ParameterSet:
        return ParameterSet({k: v.copy() for k, v in self._arrays.items()})

    def astype(self, dtype: Any) -> ParameterSet:
        return ParameterSet(
            {k: v.astype(dtype, copy=True) for k, v in self._arrays.items()}
        )

    def replace(self, updates: Mapping[str, Array]) -> ParameterSet:
        unknown = set(updates) - set(self._arrays)
        if unknown:
            raise KeyError(f"Unknown parameter arrays: {sorted(unknown)}")
        merged = dict(self._arrays)
        merged.update(updates)
        return ParameterSet(merged)


class GradientBundle(_ArrayBundle):
    """One gradient array per parameter array, same shapes."""

    def __add__(self, other: GradientBundle) -> GradientBundle:
        return GradientBundle({k: v + other[k] for k, v in self.items()})

    def scaled(self, factor: float) -> GradientBundle:
        return GradientBundle({k: v * factor for k, v in self.items()})

    def max_abs(self) -> float:
        return max(
            (float(np.max(np.abs(v))) for v in self.values()), default=0.0
        )

    def congruent_with(self, params: ParameterSet) -> bool:
        return self.shapes() == params.shapes()


@dataclass(frozen=True)
class CheckpointHeader:
    """Model dimensions and switches stored in front of the arrays."""

    users: int
    items: int
    dim: int
    depth: int
    user_feature_dim: int
    item_feature_dim: int
    hidden: int
    variant: Variant
    node_attention: AttentionMode
    graph_attention: AttentionMode
    seed: int
    share_attention: bool = False
    gamma_input: GammaInput = GammaInput.CURRENT
    readout: Readout = Readout.CONCAT
    use_user_features: bool = False
    use_item_features: bool = False
    hidden_activation: Activation = Activation.LEAKY_RELU

    def _flags(self) -> int:
        flags = 0
        if self.share_attention:
            flags |= _FLAG_SHARE
        if self.gamma_input is GammaInput.PREVIOUS:
            flags |= _FLAG_GAMMA_PREVIOUS
        if self.readout is Readout.LAST:
            flags |= _FLAG_READOUT_LAST
        if self.use_user_features:
            flags |= _FLAG_USER_FEATURES
        if self.use_item_features:
            flags |= _FLAG_ITEM_FEATURES
        return flags


def save_checkpoint(
    path: str | Path, params: ParameterSet, header: CheckpointHeader
) -> Path:
    """Write ``params`` as 32-bit floats behind ``header``."""
    path = Path(path)
    chunks = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            header.users,
            header.items,
            header.dim,
            header.depth,
            header.user_feature_dim,
            header.item_feature_dim,
            header.hidden,
            _VARIANT_CODES[header.variant],
            _ATTENTION_CODES[header.node_attention],
            _ATTENTION_CODES[header.graph_attention],
            header._flags(),
            _ACTIVATION_CODES[header.hidden_activation],
            header.seed,
            len(params),
        )
    ]
    for name, array in params.items():
        encoded = name.encode("utf-8")
        chunks.append(_NAME_LEN.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_RANK.pack(array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(
    path: str | Path,
) -> tuple[ParameterSet, CheckpointHeader]:
    """Read a checkpoint; arrays come back as float32."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(
            f"Checkpoint {str(path)!r} does not exist",
            context={"path": str(path)},
        )
    blob = path.read_bytes()
    try:
        fields = _HEADER.unpack_from(blob, 0)
    except struct.error as exc:
        raise CheckpointError(
            f"Checkpoint {str(path)!r} is truncated",
            context={"path": str(path)},
        ) from exc
    magic, version, *dims, variant, node, graph, flags, act = fields[:14]
    seed, count = fields[14:]
    if magic != MAGIC or version != FORMAT_VERSION:
        raise CheckpointError(
            f"{str(path)!r} is not a version {FORMAT_VERSION} checkpoint",
            context={"magic": magic, "version": version},
        )
    try:
        header = CheckpointHeader(
            *dims,
            variant=list(Variant)[variant],
            node_attention=list(AttentionMode)[node],
            graph_attention=list(AttentionMode)[graph],
            seed=seed,
            share_attention=bool(flags & _FLAG_SHARE),
            gamma_input=(
                GammaInput.PREVIOUS
                if flags & _FLAG_GAMMA_PREVIOUS
                else GammaInput.CURRENT
            ),
            readout=(
                Readout.LAST if flags & _FLAG_READOUT_LAST else Readout.CONCAT
            ),
            use_user_features=bool(flags & _FLAG_USER_FEATURES),
            use_item_features=bool(flags & _FLAG_ITEM_FEATURES),
            hidden_activation=list(Activation)[act],
        )
        offset = _HEADER.size
        arrays: dict[str, Array] = {}
        for _ in range(count):
            (name_len,) = _NAME_LEN.unpack_from(blob, offset)
            offset += _NAME_LEN.size
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = _RANK.unpack_from(blob, offset)
            offset += _RANK.size
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(
                blob, dtype="<f4", count=size, offset=offset
            )
            offset += 4 * size
            arrays[name] = values.astype(np.float32).reshape(shape)
    except (IndexError, ValueError, struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(
            f"Checkpoint {str(path)!r} is corrupt",
            context={"path": str(path), "original_error": type(exc).__name__},
        ) from exc
    if offset != len(blob):
        raise CheckpointError(
            f"Checkpoint {str(path)!r} has trailing bytes",
            context={"path": str(path), "trailing": len(blob) - offset},
        )
    return ParameterSet(arrays), header
