"""Integration protocols."""

from collections.abc import Mapping
from typing import Protocol, runtime_checkable

from socialdiff.autodiff import Tape, Tensor
from socialdiff.graph import HeteroGraph
from socialdiff.params import CheckpointHeader, ParameterSet


@runtime_checkable
class LossFunction(Protocol):
    """Scalar objective recorded on ``tape`` from parameter leaves."""

    def __call__(
        self, tape: Tape, leaves: Mapping[str, Tensor]
    ) -> Tensor: ...


@runtime_checkable
class ArtifactStore(Protocol):
    """Persistence abstraction for run artifacts.

    Every ``save_*`` returns a reference string that the matching
    ``load_*`` accepts. ``latest`` returns the most recent reference
    saved under ``kind`` and ``name``.
    """

    async def save_graph(self, graph: HeteroGraph, digest: str) -> str: ...
    async def load_graph(self, ref: str) -> HeteroGraph: ...
    async def find_graph(self, digest: str) -> str | None: ...
    async def save_checkpoint(
        self, params: ParameterSet, header: CheckpointHeader
    ) -> str: ...
    async def load_checkpoint(
        self, ref: str
    ) -> tuple[ParameterSet, CheckpointHeader]: ...
    async def save_text(
        self, kind: str, name: str, text: str, *, suffix: str = ".json"
    ) -> str: ...
    async def load_text(self, ref: str) -> str: ...
    async def latest(self, kind: str, name: str) -> str | None: ...
