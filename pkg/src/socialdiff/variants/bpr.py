"""Plain matrix factorization: no diffusion layers."""

from __future__ import annotations

from collections.abc import Mapping
from typing import ClassVar

from socialdiff.autodiff import Tape, Tensor
from socialdiff.variant import (
    Array,
    BaseVariant,
    EdgeIndex,
    LayerOutput,
    MatrixLayer,
)


class BPR(BaseVariant):
    """Scores are ``u^0_a . v^0_i``; the model config forces depth 0.

    A layer asked for anyway passes both embedding tables through.
    """

    slug: ClassVar[str] = "bpr"
    display_name: ClassVar[str] = "BPR"

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
