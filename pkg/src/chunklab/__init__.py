"""chunklab: chunking strategies, sparse retrieval, budgeted context assembly
and grounded-QA scoring, with a grid runner and a FastAPI service on top."""

__version__ = "0.1.0"

from .chunking import Chunk, ChunkMethod, ChunkParams, expected_chunk_inflation
from .context import ContextWindow, assemble_context
from .corpus import Document, QAPair, count_tokens, ingest_corpus, segment_sentences, tokenize
from .generation import Answer, GeneratorParams, is_abstention, render_prompt
from .metrics import (
    MetricSummary,
    QAOutcome,
    bertscore,
    bootstrap_ci,
    exact_match,
    none_ratio,
    normalize_answer,
    paired_delta_ci,
)
from .retrieval import RankedList, SparseVector, build_index, search, vectorize_text, weight_bm25
from .runner import GridConfig, RunConfig, RunReport, Runner, run_grid

__all__ = [
    "__version__",
    "Answer",
    "Chunk",
    "ChunkMethod",
    "ChunkParams",
    "ContextWindow",
    "Document",
    "GeneratorParams",
    "GridConfig",
    "MetricSummary",
    "QAOutcome",
    "QAPair",
    "RankedList",
    "RunConfig",
    "RunReport",
    "Runner",
    "SparseVector",
    "assemble_context",
    "bertscore",
    "bootstrap_ci",
    "build_index",
    "count_tokens",
    "exact_match",
    "expected_chunk_inflation",
    "ingest_corpus",
    "is_abstention",
    "none_ratio",
    "normalize_answer",
    "paired_delta_ci",
    "render_prompt",
    "run_grid",
    "search",
    "segment_sentences",
    "tokenize",
    "vectorize_text",
    "weight_bm25",
]
