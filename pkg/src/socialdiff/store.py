"""Content-addressed artifact storage in a working directory.

Layout::

    preprocessed/<digest>/       graph files written by ``save_graph``
    checkpoints/<sha>.ckpt       parameter containers
    reports/<name>-<sha>.json    reports, logs and run records
    <kind>/LATEST-<name>         reference of the newest artifact

File names carry a prefix of the SHA-256 of their content, so saving
never overwrites a different artifact.
"""

from __future__ import annotations

import hashlib
import logging
import tempfile
from pathlib import Path

import anyio
import anyio.to_thread

from socialdiff.exceptions import CheckpointError, DataError
from socialdiff.graph import HeteroGraph, load_graph, save_graph
from socialdiff.params import (
    CheckpointHeader,
    ParameterSet,
    load_checkpoint,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

PREPROCESSED = "preprocessed"
CHECKPOINTS = "checkpoints"
REPORTS = "reports"
DIGEST_LENGTH = 16


def content_digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()[:DIGEST_LENGTH]


class WorkdirStore:
    """``ArtifactStore`` backed by a directory tree."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def path(self, ref: str) -> Path:
        return self.root / ref

    async def _write(self, ref: str, payload: bytes) -> str:
        target = anyio.Path(self.root / ref)
        await target.parent.mkdir(parents=True, exist_ok=True)
        if not await target.exists():
            await target.write_bytes(payload)
        return ref

    async def _point(self, kind: str, name: str, ref: str) -> None:
        pointer = anyio.Path(self.root / kind / f"LATEST-{name}")
        await pointer.parent.mkdir(parents=True, exist_ok=True)
        await pointer.write_text(ref + "\n", encoding="utf-8")

    async def latest(self, kind: str, name: str) -> str | None:
        pointer = anyio.Path(self.root / kind / f"LATEST-{name}")
        if not await pointer.exists():
            return None
        return (await pointer.read_text(encoding="utf-8")).strip() or None

    async def save_graph(self, graph: HeteroGraph, digest: str) -> str:
        ref = f"{PREPROCESSED}/{digest}"
        await anyio.to_thread.run_sync(save_graph, graph, self.root / ref)
        await self._point(PREPROCESSED, "graph", ref)
        logger.info("Stored preprocessed graph at %s", self.root / ref)
        return ref

    async def find_graph(self, digest: str) -> str | None:
        ref = f"{PREPROCESSED}/{digest}"
        if await anyio.Path(self.root / ref / "stats.json").exists():
            return ref
        return None

    async def load_graph(self, ref: str) -> HeteroGraph:
        if not await anyio.Path(self.root / ref).is_dir():
            raise DataError(
                f"No preprocessed graph at {str(self.root / ref)!r}",
                context={"ref": ref},
            )
        return await anyio.to_thread.run_sync(load_graph, self.root / ref)

    async def save_checkpoint(
        self, params: ParameterSet, header: CheckpointHeader
    ) -> str:
        def write() -> bytes:
            with tempfile.TemporaryDirectory() as scratch:
                path = save_checkpoint(
                    Path(scratch) / "checkpoint", params, header
                )
                return path.read_bytes()

        payload = await anyio.to_thread.run_sync(write)
        ref = await self._write(
            f"{CHECKPOINTS}/{content_digest(payload)}.ckpt", payload
        )
        await self._point(CHECKPOINTS, "model", ref)
        logger.info("Stored checkpoint at %s", self.root / ref)
        return ref

    async def load_checkpoint(
        self, ref: str
    ) -> tuple[ParameterSet, CheckpointHeader]:
        path = self.root / ref
        if not await anyio.Path(path).is_file():
            raise CheckpointError(
                f"Checkpoint {str(path)!r} does not exist",
                context={"ref": ref},
            )
        return await anyio.to_thread.run_sync(load_checkpoint, path)

    async def save_text(
        self, kind: str, name: str, text: str, *, suffix: str = ".json"
    ) -> str:
        payload = text.encode("utf-8")
        ref = await self._write(
            f"{kind}/{name}-{content_digest(payload)}{suffix}", payload
        )
        await self._point(kind, name, ref)
        return ref

    async def load_text(self, ref: str) -> str:
        path = anyio.Path(self.root / ref)
        if not await path.is_file():
            raise DataError(
                f"Artifact {str(self.root / ref)!r} does not exist",
                context={"ref": ref},
            )
        return await path.read_text(encoding="utf-8")
