"""Base model variant abstraction.

A variant owns the per-layer diffusion rule: which extra parameter
arrays a model needs and how one layer turns ``(u^k, v^k)`` into
``(u^{k+1}, v^{k+1})``. ``propagate`` runs on a tape, edge by edge;
``propagate_matrix`` applies the same layer as a sparse block-matrix
product and is used to cross-check the edge form.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Mapping
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, ClassVar

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from socialdiff import autodiff as ad
from socialdiff.autodiff import Tape, Tensor
from socialdiff.enums import Activation

if TYPE_CHECKING:
    from socialdiff.graph import HeteroGraph
    from socialdiff.model import ModelConfig

Array = NDArray[Any]
IntArray = NDArray[np.int64]


@dataclass(frozen=True, eq=False)
class EdgeIndex:
    """Edge arrays of the graph diffusion runs on.

    Interest edges are ``(rated_user[e], rated_item[e])`` in row-major
    order; social edges are ``(follower[e], followee[e])``.
    """

    users: int
    items: int
    rated_user: IntArray
    rated_item: IntArray
    follower: IntArray
    followee: IntArray

    @classmethod
    def from_graph(cls, graph: HeteroGraph) -> EdgeIndex:
        interest, social = graph.interest_edges, graph.social_edges
        return cls(
            users=graph.M,
            items=graph.N,
            rated_user=interest[:, 0],
            rated_item=interest[:, 1],
            follower=social[:, 0],
            followee=social[:, 1],
        )

    @property
    def user_degree(self) -> IntArray:
        """|R_a| per user."""
        return np.bincount(self.rated_user, minlength=self.users)

    @property
    def item_degree(self) -> IntArray:
        """|R_i| per item."""
        return np.bincount(self.rated_item, minlength=self.items)

    @property
    def out_degree(self) -> IntArray:
        """|S_a| per user."""
        return np.bincount(self.follower, minlength=self.users)

    @property
    def has_social(self) -> NDArray[np.bool_]:
        return self.out_degree > 0

    @property
    def has_interest(self) -> NDArray[np.bool_]:
        return self.user_degree > 0


@dataclass(frozen=True, eq=False)
class LayerOutput:
    """One diffusion layer computed on a tape.

    Attention arrays are aligned with the edge arrays of ``EdgeIndex``:
    ``eta`` and ``beta`` with interest edges, ``alpha`` with social
    edges. ``gamma`` is ``M x 2`` (social, interest).
    """

    users: Tensor
    items: Tensor
    eta: Array | None = None
    alpha: Array | None = None
    beta: Array | None = None
    gamma: Array | None = None
    social: Tensor | None = None
    interest: Tensor | None = None


@dataclass(frozen=True, eq=False)
class MatrixLayer:
    """One diffusion layer computed with sparse matrix products."""

    users: Array
    items: Array
    eta: Array | None = None
    alpha: Array | None = None
    beta: Array | None = None
    gamma: Array | None = None
    social: Array | None = None
    interest: Array | None = None


def perceptron_shapes(
    prefix: str, width: int, hidden: int
) -> dict[str, tuple[int, ...]]:
    """Two-layer scorer ``act(x @ w1 + b1) @ w2`` over ``width`` inputs."""
    return {
        f"{prefix}.w1": (width, hidden),
        f"{prefix}.b1": (hidden,),
        f"{prefix}.w2": (hidden, 1),
    }


def perceptron(
    x: Tensor,
    leaves: Mapping[str, Tensor],
    prefix: str,
    kind: Activation,
) -> Tensor:
    """One scalar score per row of ``x``.

    There is no output bias: every score feeds a softmax, which ignores a
    shared offset.
    """
    pre = ad.add_row(
        x @ ad.lookup(leaves, f"{prefix}.w1"),
        ad.lookup(leaves, f"{prefix}.b1"),
    )
    hidden = ad.activation(pre, kind)
    scores = hidden @ ad.lookup(leaves, f"{prefix}.w2")
    return ad.reshape(scores, (x.shape[0],))


def activate(x: Array, kind: Activation | str) -> Array:
    """``autodiff.activation`` on a plain array."""
    kind = Activation(kind)
    if kind is Activation.IDENTITY:
        return x
    if kind is Activation.TANH:
        return np.tanh(x)
    return np.where(x > 0, x, ad.LEAKY_SLOPE * x)


def perceptron_scores(
    x: Array,
    params: Mapping[str, Array],
    prefix: str,
    kind: Activation,
) -> Array:
    """``perceptron`` on plain arrays."""
    hidden = activate(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"], kind)
    return (hidden @ params[f"{prefix}.w2"]).ravel()


def row_softmax(
    scores: Array,
    rows: IntArray,
    cols: IntArray,
    shape: tuple[int, int],
) -> sp.csr_matrix:
    """Sparse matrix holding the softmax of ``scores`` over each row's
    stored entries. Rows without entries stay empty."""
    if not scores.size:
        return sp.csr_matrix(shape, dtype=np.float64)
    # Shift every score above zero so the sparse row max ignores the
    # implicit zeros.
    floor = float(scores.min()) - 1.0
    lifted = sp.csr_matrix((scores - floor, (rows, cols)), shape=shape)
    row_max = lifted.max(axis=1).toarray().ravel() + floor
    exp = sp.csr_matrix(
        (np.exp(scores - row_max[rows]), (rows, cols)), shape=shape
    )
    totals = np.asarray(exp.sum(axis=1)).ravel()
    totals[totals == 0] = 1.0
    return sp.csr_matrix(sp.diags(1.0 / totals) @ exp)


def entries(matrix: sp.csr_matrix, rows: IntArray, cols: IntArray) -> Array:
    """Stored values of ``matrix`` at ``(rows[e], cols[e])``."""
    if not rows.size:
        return np.zeros(0)
    return np.asarray(matrix[rows, cols]).ravel()


def constant_leaves(
    tape: Tape, params: Mapping[str, Array]
) -> dict[str, Tensor]:
    """Parameter arrays as unrecorded constants on ``tape``."""
    return {name: tape.constant(array) for name, array in params.items()}


class BaseVariant(ABC):
    """Base class for diffusion model variants."""

    slug: ClassVar[str] = ""
    display_name: ClassVar[str] = ""
    user_selectable: ClassVar[bool] = True

    def __init__(self, config: ModelConfig) -> None:
        self.config = config

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        """Layer parameter arrays beyond the embeddings and fusion."""
        return {}

    @abstractmethod
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
        """Compute layer ``layer + 1`` from layer ``layer`` on a tape."""

    @abstractmethod
    def propagate_matrix(
        self,
        params: Mapping[str, Array],
        index: EdgeIndex,
        layer: int,
        users: Array,
        items: Array,
        previous: MatrixLayer | None,
    ) -> MatrixLayer:
        """Compute the same layer with sparse matrix products."""
