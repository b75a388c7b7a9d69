"""Social-only influence diffusion with a per-layer affine transform."""

from __future__ import annotations

from collections.abc import Mapping
from typing import ClassVar

import numpy as np
import scipy.sparse as sp

from socialdiff import autodiff as ad
from socialdiff.autodiff import Tape, Tensor
from socialdiff.variant import (
    Array,
    BaseVariant,
    EdgeIndex,
    LayerOutput,
    MatrixLayer,
)


def _pooling_weights(index: EdgeIndex) -> Array:
    degree = index.out_degree
    return 1.0 / degree[index.follower]


class DiffNet(BaseVariant):
    """``u' = [mean_{b in S_a} u_b, u] @ W_k + b_k``; items stay fixed.

    A user who follows nobody pools a zero vector.
    """

    slug: ClassVar[str] = "diffnet"
    display_name: ClassVar[str] = "DiffNet"

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        D = self.config.dim
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in range(self.config.depth):
            shapes[f"transform.{layer}.weight"] = (2 * D, D)
            shapes[f"transform.{layer}.bias"] = (D,)
        return shapes

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
        pooling = _pooling_weights(index)
        pooled = ad.segment_sum(
            ad.scale_rows(
                tape.constant(pooling), ad.row_gather(users, index.followee)
            ),
            index.follower,
            index.users,
        )
        next_users = ad.add_row(
            ad.concat([pooled, users])
            @ ad.lookup(leaves, f"transform.{layer}.weight"),
            ad.lookup(leaves, f"transform.{layer}.bias"),
        )
        return LayerOutput(users=next_users, items=items, alpha=pooling)

    def propagate_matrix(
        self,
        params: Mapping[str, Array],
        index: EdgeIndex,
        layer: int,
        users: Array,
        items: Array,
        previous: MatrixLayer | None,
    ) -> MatrixLayer:
        pooling = _pooling_weights(index)
        S = sp.csr_matrix(
            (pooling, (index.follower, index.followee)),
            shape=(index.users, index.users),
        )
        weight = params[f"transform.{layer}.weight"]
        bias = params[f"transform.{layer}.bias"]
        next_users = np.hstack([S @ users, users]) @ weight + bias
        return MatrixLayer(
            users=next_users.astype(users.dtype), items=items, alpha=pooling
        )
