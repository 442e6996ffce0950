"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

from ..chunking import ChunkMethod
from ..runner import GridConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class IngestRequest(BaseModel):
    path: str
    kind: Literal["documents", "qa"]
    corpus_id: str | None = None


class CorpusInfo(BaseModel):
    corpus_id: str
    kind: str
    count: int
    digest: str
    path: str


class ChunkRequest(BaseModel):
    corpus_id: str
    method: ChunkMethod
    size_s: int = Field(ge=10)
    overlap_o: float = Field(default=0.0, ge=0.0, lt=0.5)
    semantic_threshold: float = 0.5
    embedding_dim: int = 64
    out: str | None = None
    inline_text: bool = False


class ChunkSetInfo(BaseModel):
    chunkset_id: str
    corpus_id: str
    method: ChunkMethod
    chunk_count: int
    oversized_count: int
    out: str | None = None


class IndexRequest(BaseModel):
    chunkset_id: str
    mode: Literal["bm25", "external"] = "bm25"
    chunk_vectors: str | None = None
    k1: float = 1.2
    b: float = 0.75
    out: str | None = None


class IndexInfo(BaseModel):
    index_id: str
    chunkset_id: str
    mode: str
    n_chunks: int
    n_terms: int
    postings: int
    avg_token_count: float
    out: str | None = None


class SearchRequest(BaseModel):
    query: str | None = None
    query_id: str | None = None
    query_vectors: str | None = None
    k: int = Field(default=10, ge=1)


class Hit(BaseModel):
    chunk_id: str
    score: float


class SearchResponse(BaseModel):
    hits: list[Hit]


class RunRequest(BaseModel):
    config: GridConfig
    out_dir: str
    resume: bool = False
    stub_generator: bool = False
    policy: Literal["stop", "skip"] | None = None


class RunStatus(BaseModel):
    run_id: str
    state: Literal["running", "finished", "failed"]
    total_cells: int
    completed_cells: int
    out_dir: str
    error: str | None = None


class ExportRequest(BaseModel):
    formats: list[Literal["csv", "jsonl", "plotdata"]] = Field(
        default_factory=lambda: ["csv", "jsonl", "plotdata"]
    )


class ExportResponse(BaseModel):
    files: list[str]


class DefaultRow(BaseModel):
    choice: str
    default: str
    why: str


class DefaultsResponse(BaseModel):
    rows: list[DefaultRow]
