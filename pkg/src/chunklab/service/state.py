"""In-memory registries behind the service endpoints.

Corpora, chunk sets and indexes are single-writer at registration time and
read-only afterwards; grid runs execute on daemon threads and publish their
status through :class:`RunJob`.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from ..chunking import Chunk
from ..corpus import CorpusHandle
from ..retrieval import Index
from ..runner import RunReport


@dataclass
class ChunkSet:
    chunkset_id: str
    corpus_id: str
    method: str
    chunks: list[Chunk]
    lookup: dict[str, Chunk]


@dataclass
class BuiltIndex:
    index_id: str
    chunkset_id: str
    index: Index
    lookup: dict[str, Chunk]


@dataclass
class RunJob:
    run_id: str
    out_dir: Path
    total_cells: int
    state: str = "running"  # running | finished | failed
    report: RunReport | None = None
    error: str | None = None
    thread: threading.Thread | None = None

    @property
    def completed_cells(self) -> int:
        cells_dir = self.out_dir / "cells"
        if not cells_dir.exists():
            return 0
        return len(list(cells_dir.glob("*.json")))


@dataclass
class AppState:
    corpora: dict[str, CorpusHandle] = field(default_factory=dict)
    chunksets: dict[str, ChunkSet] = field(default_factory=dict)
    indexes: dict[str, BuiltIndex] = field(default_factory=dict)
    runs: dict[str, RunJob] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @staticmethod
    def new_id(prefix: str) -> str:
        return f"{prefix}-{uuid.uuid4().hex[:8]}"
