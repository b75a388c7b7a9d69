"""Diffusion recommender forward pass.

Layer 0 fuses free embeddings with transformed features
(``u^0 = P + X @ W1``, ``v^0 = Q + Y @ W2``); each of the K layers then
applies the variant's diffusion rule over the training graph. A user/item
pair is scored by the inner product of their layer-concatenated vectors,
which equals ``sum_k u^k_a . v^k_i``.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, fields, replace
from functools import cached_property
from typing import Any

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from socialdiff import autodiff as ad
from socialdiff.autodiff import Tape, Tensor
from socialdiff.enums import (
    Activation,
    AttentionMode,
    GammaInput,
    Readout,
    Variant,
)
from socialdiff.exceptions import CheckpointError, ConfigError
from socialdiff.graph import HeteroGraph
from socialdiff.params import CheckpointHeader, ParameterSet
from socialdiff.registry import VariantRegistry
from socialdiff.registry import registry as default_registry
from socialdiff.variant import (
    BaseVariant,
    EdgeIndex,
    LayerOutput,
    MatrixLayer,
    constant_leaves,
)

logger = logging.getLogger(__name__)

Array = NDArray[Any]

INIT_STD = 0.01
BIAS_SUFFIXES = (".b1", ".bias")
RESERVED_PARAMETERS = frozenset({"P", "Q", "W1", "W2"})


@dataclass(frozen=True)
class ModelConfig:
    """Model shape and switches.

    ``hidden`` is the attention perceptron width and defaults to ``dim``.
    The BPR variant always runs with ``depth=0``.
    """

    variant: str = Variant.DIFFNETPP
    dim: int = 64
    depth: int = 2
    hidden: int | None = None
    node_attention: AttentionMode = AttentionMode.ATT
    graph_attention: AttentionMode = AttentionMode.ATT
    gamma_input: GammaInput = GammaInput.CURRENT
    share_attention: bool = False
    readout: Readout = Readout.CONCAT
    hidden_activation: Activation = Activation.LEAKY_RELU
    use_user_features: bool = False
    use_item_features: bool = False

    def __post_init__(self) -> None:
        try:
            coerced = {
                "node_attention": AttentionMode(self.node_attention),
                "graph_attention": AttentionMode(self.graph_attention),
                "gamma_input": GammaInput(self.gamma_input),
                "readout": Readout(self.readout),
                "hidden_activation": Activation(self.hidden_activation),
            }
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        variant = str(self.variant)
        coerced["variant"] = (
            Variant(variant) if variant in tuple(Variant) else variant
        )
        for name, value in coerced.items():
            object.__setattr__(self, name, value)
        if self.dim < 1:
            raise ConfigError("Embedding width must be positive")
        if self.depth < 0:
            raise ConfigError("Diffusion depth must not be negative")
        if self.hidden is not None and self.hidden < 1:
            raise ConfigError("Attention hidden width must be positive")
        if self.variant == Variant.BPR and self.depth:
            object.__setattr__(self, "depth", 0)

    @property
    def hidden_width(self) -> int:
        return self.hidden or self.dim

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(
                f"Unknown model settings: {', '.join(sorted(unknown))}"
            )
        return cls(**dict(data))

    def to_mapping(self) -> dict[str, Any]:
        return {
            key: str(value) if isinstance(value, str) else value
            for key, value in asdict(self).items()
        }

    def replace(self, **changes: Any) -> ModelConfig:
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class DiffusionState:
    """Per-layer representations and attention weights, k = 0..K.

    Lists of attention weights hold one entry per diffusion layer; an
    entry is ``None`` where the variant has no such weight.
    """

    users: tuple[Array, ...]
    items: tuple[Array, ...]
    index: EdgeIndex
    readout: Readout = Readout.CONCAT
    eta: tuple[Array | None, ...] = ()
    alpha: tuple[Array | None, ...] = ()
    beta: tuple[Array | None, ...] = ()
    gamma: tuple[Array | None, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.users) - 1

    @cached_property
    def _user_readout(self) -> Array:
        return self._readout(self.users)

    @cached_property
    def _item_readout(self) -> Array:
        return self._readout(self.items)

    def user_matrix(self) -> Array:
        """Readout user vectors, one row per user."""
        return self._user_readout

    def item_matrix(self) -> Array:
        return self._item_readout

    def _readout(self, layers: Sequence[Array]) -> Array:
        if self.readout is Readout.LAST:
            return layers[-1]
        return np.concatenate(layers, axis=1)

    def score(self, user: int, item: int) -> float:
        return float(self.user_matrix()[user] @ self.item_matrix()[item])

    def scores(self, user: int, items: NDArray[np.int64]) -> Array:
        return self.item_matrix()[items] @ self.user_matrix()[user]

    def eta_matrix(self, layer: int) -> sp.csr_matrix:
        """Item-side weights as an ``N x M`` matrix (row i over R_i)."""
        index = self.index
        return sp.csr_matrix(
            (self.eta[layer], (index.rated_item, index.rated_user)),
            shape=(index.items, index.users),
        )

    def alpha_matrix(self, layer: int) -> sp.csr_matrix:
        """Social weights as an ``M x M`` matrix (row a over S_a)."""
        index = self.index
        return sp.csr_matrix(
            (self.alpha[layer], (index.follower, index.followee)),
            shape=(index.users, index.users),
        )

    def beta_matrix(self, layer: int) -> sp.csr_matrix:
        """Interest weights as an ``M x N`` matrix (row a over R_a)."""
        index = self.index
        return sp.csr_matrix(
            (self.beta[layer], (index.rated_user, index.rated_item)),
            shape=(index.users, index.items),
        )


@dataclass(frozen=True, eq=False)
class DiffusionTrace:
    """A forward pass recorded on a tape, ready for scoring a batch."""

    users: tuple[Tensor, ...]
    items: tuple[Tensor, ...]
    layers: tuple[LayerOutput, ...]
    index: EdgeIndex
    readout: Readout = Readout.CONCAT

    def _readout(self, layers: Sequence[Tensor]) -> Tensor:
        if self.readout is Readout.LAST or len(layers) == 1:
            return layers[-1]
        return ad.concat(list(layers), axis=1)

    @cached_property
    def user_readout(self) -> Tensor:
        return self._readout(self.users)

    @cached_property
    def item_readout(self) -> Tensor:
        return self._readout(self.items)

    def scores(
        self, users: NDArray[np.int64], items: NDArray[np.int64]
    ) -> Tensor:
        """Predicted preference of ``users[e]`` for ``items[e]``."""
        return ad.row_dot(
            ad.row_gather(self.user_readout, users),
            ad.row_gather(self.item_readout, items),
        )

    def state(self) -> DiffusionState:
        return DiffusionState(
            users=tuple(t.value for t in self.users),
            items=tuple(t.value for t in self.items),
            index=self.index,
            readout=self.readout,
            eta=tuple(layer.eta for layer in self.layers),
            alpha=tuple(layer.alpha for layer in self.layers),
            beta=tuple(layer.beta for layer in self.layers),
            gamma=tuple(layer.gamma for layer in self.layers),
        )


class DiffusionModel:
    """A model variant bound to the graph it diffuses over."""

    def __init__(
        self,
        config: ModelConfig,
        graph: HeteroGraph,
        *,
        registry: VariantRegistry | None = None,
    ) -> None:
        variant_class = (registry or default_registry).get_by_slug(
            config.variant
        )
        if config.use_user_features and graph.X is None:
            raise ConfigError(
                "User features are enabled but the graph has none"
            )
        if config.use_item_features and graph.Y is None:
            raise ConfigError(
                "Item features are enabled but the graph has none"
            )
        self.config = config
        self.graph = graph
        self.variant: BaseVariant = variant_class(config)
        self.index = EdgeIndex.from_graph(graph)

    @property
    def user_feature_dim(self) -> int:
        X = self.graph.X
        if not self.config.use_user_features or X is None:
            return 0
        return int(X.shape[1])

    @property
    def item_feature_dim(self) -> int:
        Y = self.graph.Y
        if not self.config.use_item_features or Y is None:
            return 0
        return int(Y.shape[1])

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        D = self.config.dim
        shapes: dict[str, tuple[int, ...]] = {
            "P": (self.graph.M, D),
            "Q": (self.graph.N, D),
        }
        if self.user_feature_dim:
            shapes["W1"] = (self.user_feature_dim, D)
        if self.item_feature_dim:
            shapes["W2"] = (self.item_feature_dim, D)
        layers = self.variant.parameter_shapes()
        clash = sorted(RESERVED_PARAMETERS & layers.keys())
        if clash:
            raise ConfigError(
                f"Variant {self.config.variant!r} declares reserved "
                f"parameter arrays: {', '.join(clash)}"
            )
        shapes.update(layers)
        return shapes

    def init_parameters(
        self, seed: int = 0, *, std: float = INIT_STD, dtype: Any = np.float64
    ) -> ParameterSet:
        """Draw every weight from N(0, std^2); biases start at zero."""
        rng = np.random.default_rng(seed)
        arrays: dict[str, Array] = {}
        for name, shape in self.parameter_shapes().items():
            if name.endswith(BIAS_SUFFIXES):
                arrays[name] = np.zeros(shape, dtype=dtype)
            else:
                arrays[name] = rng.normal(0.0, std, size=shape).astype(dtype)
        return ParameterSet(arrays)

    def check_parameters(self, params: ParameterSet) -> None:
        expected = self.parameter_shapes()
        if params.shapes() != expected:
            raise ConfigError(
                "Parameter arrays do not match the model configuration",
                context={"expected": expected, "found": params.shapes()},
            )

    def _fuse(
        self, tape: Tape, leaves: Mapping[str, Tensor]
    ) -> tuple[Tensor, Tensor]:
        users, items = ad.lookup(leaves, "P"), ad.lookup(leaves, "Q")
        if self.user_feature_dim:
            users = users + tape.constant(self.graph.X) @ ad.lookup(
                leaves, "W1"
            )
        if self.item_feature_dim:
            items = items + tape.constant(self.graph.Y) @ ad.lookup(
                leaves, "W2"
            )
        return users, items

    def trace(self, tape: Tape, leaves: Mapping[str, Tensor]) -> DiffusionTrace:
        """Run fusion and all diffusion layers on ``tape``."""
        users, items = self._fuse(tape, leaves)
        user_layers, item_layers = [users], [items]
        outputs: list[LayerOutput] = []
        previous: LayerOutput | None = None
        for layer in range(self.config.depth):
            previous = self.variant.propagate(
                tape, leaves, self.index, layer, users, items, previous
            )
            users, items = previous.users, previous.items
            user_layers.append(users)
            item_layers.append(items)
            outputs.append(previous)
        return DiffusionTrace(
            users=tuple(user_layers),
            items=tuple(item_layers),
            layers=tuple(outputs),
            index=self.index,
            readout=self.config.readout,
        )

    def forward(
        self, params: ParameterSet, *, dtype: Any = None
    ) -> DiffusionState:
        """Unrecorded forward pass over every user and item."""
        self.check_parameters(params)
        tape = Tape(recording=False, dtype=dtype or params.dtype)
        return self.trace(tape, constant_leaves(tape, params)).state()

    def forward_matrix(self, params: ParameterSet) -> DiffusionState:
        """The same forward pass with each layer as a block-matrix
        product over the stacked ``[U; V]`` representations."""
        self.check_parameters(params)
        dtype = params.dtype
        U = params.P.astype(dtype, copy=True)
        V = params.Q.astype(dtype, copy=True)
        if self.user_feature_dim:
            U = U + self.graph.X.astype(dtype) @ params["W1"]
        if self.item_feature_dim:
            V = V + self.graph.Y.astype(dtype) @ params["W2"]
        user_layers, item_layers = [U], [V]
        outputs: list[MatrixLayer] = []
        previous: MatrixLayer | None = None
        for layer in range(self.config.depth):
            previous = self.variant.propagate_matrix(
                params, self.index, layer, U, V, previous
            )
            U, V = previous.users, previous.items
            user_layers.append(U)
            item_layers.append(V)
            outputs.append(previous)
        return DiffusionState(
            users=tuple(user_layers),
            items=tuple(item_layers),
            index=self.index,
            readout=self.config.readout,
            eta=tuple(layer.eta for layer in outputs),
            alpha=tuple(layer.alpha for layer in outputs),
            beta=tuple(layer.beta for layer in outputs),
            gamma=tuple(layer.gamma for layer in outputs),
        )

    def checkpoint_header(self, seed: int) -> CheckpointHeader:
        config = self.config
        try:
            variant = Variant(config.variant)
        except ValueError:
            raise CheckpointError(
                f"Variant {config.variant!r} has no checkpoint code"
            ) from None
        return CheckpointHeader(
            users=self.graph.M,
            items=self.graph.N,
            dim=config.dim,
            depth=config.depth,
            user_feature_dim=self.user_feature_dim,
            item_feature_dim=self.item_feature_dim,
            hidden=config.hidden_width,
            variant=variant,
            node_attention=config.node_attention,
            graph_attention=config.graph_attention,
            seed=seed,
            share_attention=config.share_attention,
            gamma_input=config.gamma_input,
            readout=config.readout,
            use_user_features=config.use_user_features,
            use_item_features=config.use_item_features,
            hidden_activation=config.hidden_activation,
        )


def config_from_header(header: CheckpointHeader) -> ModelConfig:
    """The model config a checkpoint was trained with."""
    return ModelConfig(
        variant=header.variant,
        dim=header.dim,
        depth=header.depth,
        hidden=header.hidden,
        node_attention=header.node_attention,
        graph_attention=header.graph_attention,
        gamma_input=header.gamma_input,
        share_attention=header.share_attention,
        readout=header.readout,
        hidden_activation=header.hidden_activation,
        use_user_features=header.use_user_features,
        use_item_features=header.use_item_features,
    )


def init_parameters(
    config: ModelConfig,
    graph: HeteroGraph,
    seed: int = 0,
    *,
    std: float = INIT_STD,
) -> ParameterSet:
    return DiffusionModel(config, graph).init_parameters(seed, std=std)


def forward_all(
    graph: HeteroGraph, params: ParameterSet, config: ModelConfig
) -> DiffusionState:
    return DiffusionModel(config, graph).forward(params)


def forward_matrix(
    graph: HeteroGraph, params: ParameterSet, config: ModelConfig
) -> DiffusionState:
    return DiffusionModel(config, graph).forward_matrix(params)


def predict(state: DiffusionState, user: int, item: int) -> float:
    return state.score(user, item)
