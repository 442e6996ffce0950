"""Grid runner: execute every (method, size, overlap, budget) cell.

Each cell runs the full pipeline (chunk, index, retrieve per question,
assemble a budgeted context, generate, score) and aggregates metric
summaries with bootstrap confidence intervals.  Chunking and indexing are
cached per (method, size, overlap, threshold, retrieval mode) because the
context budget only matters at query time, so a five-budget grid reuses one
index per chunking configuration.

Reproducibility: a single master seed fans out to per-component seeds via
:func:`derive_seed`, which hashes (master, component labels...) into a fresh
63-bit seed; every summary records the seed it used.  Completed cells are
persisted as ``cells/<fingerprint>.json`` in the output directory and
skipped on resume.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Literal, Sequence

from pydantic import BaseModel, Field, ValidationError, field_validator

from . import __version__
from .chunking import Chunk, ChunkMethod, ChunkParams, chunk_corpus
from .context import STOP, assemble_context
from .corpus import (
    DEFAULT_SEGMENTER,
    DEFAULT_TOKENIZER,
    Document,
    QAPair,
    SentenceSegmenter,
    Tokenizer,
    VocabTokenizer,
    ingest_corpus,
    load_abbreviations,
)
from .embedding import (
    CachedEmbeddingProvider,
    DeterministicEmbeddingProvider,
    EmbeddingCache,
    RemoteEmbeddingProvider,
)
from .errors import ChunklabError, ConfigError, GenerationError, UndefinedMetricError
from .generation import GeneratorParams, RemoteGenerator, StubGenerator, render_prompt
from .metrics import (
    MetricSummary,
    QAOutcome,
    bertscore,
    bootstrap_ci,
    exact_match,
    no_measurable_difference,
    paired_delta_ci,
)
from .retrieval import ExternalVectors, Index, build_index, search, vectorize_text
from .synthetic import ToyCorpusSpec, build_toy_corpus

logger = logging.getLogger(__name__)

METRIC_NAMES = ("em", "bert_f1", "none_ratio")

# Shipped default configuration for agentic QA over text documents.
RECOMMENDED_DEFAULTS = (
    {"choice": "overlap_o", "default": "0", "why": "inflates chunk count and index cost without a quality gain"},
    {"choice": "chunker", "default": "sentence", "why": "tracks semantic merging up to ~5k-token budgets at far lower cost"},
    {"choice": "size_s", "default": "150-300", "why": "balances retrieval recall against abstention"},
    {"choice": "budget_c_qa", "default": "~2500", "why": "strong exact-match region before long-context decline"},
    {"choice": "budget_c_summarization", "default": "~500", "why": "small focused contexts score best semantically"},
    {"choice": "budget_above_5k", "default": "consider semantic chunker", "why": "slight edge at very large contexts"},
)


def derive_seed(master: int, *labels: str) -> int:
    """Deterministic 63-bit component seed from the master seed and labels."""
    payload = ":".join([str(master), *labels]).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") % (2**63)


# ---------------------------------------------------------------------------
# Configuration schema (one JSON file, validated here)
# ---------------------------------------------------------------------------


class ToySettings(BaseModel):
    n_questions: int = 20
    n_documents: int = 20
    filler_sentences_per_doc: int = 12
    max_decoys: int = 3
    seed: int = 7


class CorpusSettings(BaseModel):
    documents: str | None = None
    qa: str | None = None
    toy: ToySettings | None = None


class GridSpec(BaseModel):
    methods: list[ChunkMethod] = Field(
        default_factory=lambda: [ChunkMethod.TOKEN, ChunkMethod.SENTENCE,
                                 ChunkMethod.SEMANTIC, ChunkMethod.CODE]
    )
    sizes: list[int] = Field(default_factory=lambda: list(range(50, 501, 50)))
    overlaps: list[float] = Field(default_factory=lambda: [0.0, 0.2])
    budgets: list[int] = Field(default_factory=lambda: [500, 1000, 2500, 5000, 10000])

    @field_validator("sizes")
    @classmethod
    def _sizes_large_enough(cls, sizes: list[int]) -> list[int]:
        if not sizes or any(s < 10 for s in sizes):
            raise ValueError("sizes must be non-empty, each >= 10")
        return sizes

    @field_validator("overlaps")
    @classmethod
    def _overlaps_in_range(cls, overlaps: list[float]) -> list[float]:
        if not overlaps or any(not (0.0 <= o < 0.5) for o in overlaps):
            raise ValueError("overlaps must be non-empty, each in [0, 0.5)")
        return overlaps

    @field_validator("budgets")
    @classmethod
    def _budgets_positive(cls, budgets: list[int]) -> list[int]:
        if not budgets or any(b < 1 for b in budgets):
            raise ValueError("budgets must be non-empty, each >= 1")
        return budgets


class RetrievalSettings(BaseModel):
    mode: Literal["bm25", "external"] = "bm25"
    chunk_vectors: str | None = None
    query_vectors: str | None = None
    k1: float = 1.2
    b: float = 0.75
    min_expected_chunk_tokens: int | None = None
    k_slack: int = 16


class EmbeddingSettings(BaseModel):
    kind: Literal["deterministic", "remote"] = "deterministic"
    dim: int = 64
    batch_size: int = 64
    endpoint: str | None = None
    model: str | None = None
    cache_dir: str | None = None


class GeneratorSettings(BaseModel):
    kind: Literal["stub", "remote"] = "stub"
    model: str = ""
    endpoint: str = ""
    temperature: float = 0.1
    max_output_tokens: int = 64
    timeout_ms: int = 30000
    retries: int = 2
    max_concurrency: int = 4


class BootstrapSettings(BaseModel):
    B: int = 1000
    level: float = 0.95


class GridConfig(BaseModel):
    """The one structured config file driving :func:`run_grid`."""

    corpus: CorpusSettings
    grid: GridSpec = Field(default_factory=GridSpec)
    fill_policy: Literal["stop", "skip"] = STOP
    retrieval: RetrievalSettings = Field(default_factory=RetrievalSettings)
    embedding: EmbeddingSettings = Field(default_factory=EmbeddingSettings)
    generator: GeneratorSettings = Field(default_factory=GeneratorSettings)
    bootstrap: BootstrapSettings = Field(default_factory=BootstrapSettings)
    semantic_threshold: float = 0.5
    tokenizer_vocab: str | None = None
    abbreviations: str | None = None
    cell_workers: int = Field(default=1, ge=1)
    seed: int = 20240

    def fingerprint(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=8).hexdigest()


def load_grid_config(path: str | Path) -> GridConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return GridConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def grid_config_schema() -> dict:
    """JSON schema of the run configuration file."""
    return GridConfig.model_json_schema()


# ---------------------------------------------------------------------------
# Cells and their results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Coordinates of one grid cell."""

    method: ChunkMethod
    size_s: int
    overlap_o: float
    budget_c: int
    fill_policy: str = STOP
    retrieval_mode: str = "bm25"
    generator_kind: str = "stub"
    semantic_threshold: float = 0.5
    seed: int = 20240

    def chunk_params(self) -> ChunkParams:
        overlap = self.overlap_o if self.method is ChunkMethod.TOKEN else 0.0
        return ChunkParams(
            method=self.method,
            size_s=self.size_s,
            overlap_o=overlap,
            semantic_threshold=self.semantic_threshold,
        )

    def as_dict(self) -> dict:
        return {
            "method": self.method.value,
            "size_s": self.size_s,
            "overlap_o": self.overlap_o,
            "budget_c": self.budget_c,
            "fill_policy": self.fill_policy,
            "retrieval_mode": self.retrieval_mode,
            "generator_kind": self.generator_kind,
            "semantic_threshold": self.semantic_threshold,
            "seed": self.seed,
        }

    def fingerprint(self, corpus_digest: str = "", qa_digest: str = "") -> str:
        payload = json.dumps(
            {**self.as_dict(), "corpus": corpus_digest, "qa": qa_digest},
            sort_keys=True,
        )
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=8).hexdigest()


@dataclass
class CellResult:
    config: RunConfig
    fingerprint: str
    summaries: dict[str, MetricSummary]
    n_questions: int
    n_ok: int
    n_error: int
    n_empty_context: int
    chunk_count: int
    oversized_count: int
    index_terms: int
    index_postings: int
    mean_context_tokens: float
    skipped_total: int
    wall_time_s: float
    records: list[dict] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "fingerprint": self.fingerprint,
            "summaries": {
                name: {
                    "name": s.name, "mean": s.mean, "ci_low": s.ci_low,
                    "ci_high": s.ci_high, "n": s.n, "bootstrap_B": s.bootstrap_B,
                    "seed": s.seed, "level": s.level,
                }
                for name, s in self.summaries.items()
            },
            "n_questions": self.n_questions,
            "n_ok": self.n_ok,
            "n_error": self.n_error,
            "n_empty_context": self.n_empty_context,
            "chunk_count": self.chunk_count,
            "oversized_count": self.oversized_count,
            "index_terms": self.index_terms,
            "index_postings": self.index_postings,
            "mean_context_tokens": self.mean_context_tokens,
            "skipped_total": self.skipped_total,
            "wall_time_s": self.wall_time_s,
            "records": self.records,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CellResult":
        config = RunConfig(
            method=ChunkMethod(data["config"]["method"]),
            size_s=data["config"]["size_s"],
            overlap_o=data["config"]["overlap_o"],
            budget_c=data["config"]["budget_c"],
            fill_policy=data["config"]["fill_policy"],
            retrieval_mode=data["config"]["retrieval_mode"],
            generator_kind=data["config"]["generator_kind"],
            semantic_threshold=data["config"]["semantic_threshold"],
            seed=data["config"]["seed"],
        )
        summaries = {
            name: MetricSummary(**payload) for name, payload in data["summaries"].items()
        }
        return cls(
            config=config,
            fingerprint=data["fingerprint"],
            summaries=summaries,
            n_questions=data["n_questions"],
            n_ok=data["n_ok"],
            n_error=data["n_error"],
            n_empty_context=data["n_empty_context"],
            chunk_count=data["chunk_count"],
            oversized_count=data["oversized_count"],
            index_terms=data["index_terms"],
            index_postings=data["index_postings"],
            mean_context_tokens=data["mean_context_tokens"],
            skipped_total=data["skipped_total"],
            wall_time_s=data["wall_time_s"],
            records=data.get("records", []),
            error=data.get("error"),
        )


@dataclass
class RunReport:
    config_fingerprint: str
    toolkit_version: str
    master_seed: int
    fill_policy: str
    cells: list[CellResult] = field(default_factory=list)
    total_wall_time_s: float = 0.0

    def sorted_cells(self) -> list[CellResult]:
        return sorted(
            self.cells,
            key=lambda c: (c.config.method.value, c.config.size_s,
                           c.config.overlap_o, c.config.budget_c),
        )

    def to_dict(self) -> dict:
        return {
            "config_fingerprint": self.config_fingerprint,
            "toolkit_version": self.toolkit_version,
            "master_seed": self.master_seed,
            "fill_policy": self.fill_policy,
            "total_wall_time_s": self.total_wall_time_s,
            "cells": [c.to_dict() for c in self.sorted_cells()],
        }


# ---------------------------------------------------------------------------
# The runner
# ---------------------------------------------------------------------------


class Runner:
    def __init__(self, config: GridConfig, out_dir: str | Path | None = None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir else None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "cells").mkdir(exist_ok=True)
            self._attach_run_log()

        self.documents, self.qa_pairs, self.corpus_digest, self.qa_digest = self._load_corpus()
        self.tokenizer: Tokenizer = (
            VocabTokenizer.from_file(config.tokenizer_vocab)
            if config.tokenizer_vocab
            else DEFAULT_TOKENIZER
        )
        if config.tokenizer_vocab or config.abbreviations:
            self.segmenter = SentenceSegmenter(
                abbreviations=load_abbreviations(config.abbreviations),
                tokenizer=self.tokenizer,
            )
        else:
            self.segmenter = DEFAULT_SEGMENTER
        self.embedder = self._build_embedder()
        self.generator = self._build_generator()
        self.external_chunk_vectors = (
            ExternalVectors.load(config.retrieval.chunk_vectors)
            if config.retrieval.mode == "external" and config.retrieval.chunk_vectors
            else None
        )
        self.external_query_vectors = (
            ExternalVectors.load(config.retrieval.query_vectors)
            if config.retrieval.mode == "external" and config.retrieval.query_vectors
            else None
        )
        self._artifact_cache: dict[tuple, tuple[list[Chunk], Index, dict[str, Chunk]]] = {}
        self._artifact_lock = threading.Lock()

    def _attach_run_log(self) -> None:
        root = logging.getLogger("chunklab")
        for old in list(root.handlers):  # one active run log per process
            if getattr(old, "_chunklab_run_log", False):
                root.removeHandler(old)
                old.close()
        handler = logging.FileHandler(self.out_dir / "run.log", encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        handler._chunklab_run_log = True
        root.addHandler(handler)
        root.setLevel(logging.INFO)

    def _load_corpus(self) -> tuple[dict[str, Document], list[QAPair], str, str]:
        cfg = self.config.corpus
        if cfg.toy is not None:
            spec = ToyCorpusSpec(
                n_questions=cfg.toy.n_questions,
                n_documents=cfg.toy.n_documents,
                filler_sentences_per_doc=cfg.toy.filler_sentences_per_doc,
                max_decoys=cfg.toy.max_decoys,
                seed=cfg.toy.seed,
            )
            docs, qa = build_toy_corpus(spec)
            digest = hashlib.blake2b(
                json.dumps(cfg.toy.model_dump(), sort_keys=True).encode(), digest_size=8
            ).hexdigest()
            return {d.id: d for d in docs}, qa, f"toy:{digest}", f"toy:{digest}"
        if not cfg.documents or not cfg.qa:
            raise ConfigError("corpus needs either toy settings or documents+qa paths")
        doc_handle = ingest_corpus(cfg.documents, "documents")
        qa_handle = ingest_corpus(cfg.qa, "qa")
        return doc_handle.documents, qa_handle.qa_pairs, doc_handle.digest, qa_handle.digest

    def _build_embedder(self):
        cfg = self.config.embedding
        if cfg.kind == "deterministic":
            provider = DeterministicEmbeddingProvider(dim=cfg.dim, batch_size=cfg.batch_size)
        else:
            provider = RemoteEmbeddingProvider(
                endpoint=cfg.endpoint, model=cfg.model, dim=cfg.dim, batch_size=cfg.batch_size
            )
        if cfg.cache_dir:
            cache = EmbeddingCache(cfg.cache_dir, provider.kind, cfg.model or "default")
            provider = CachedEmbeddingProvider(provider, cache)
        return provider

    def _build_generator(self):
        cfg = self.config.generator
        if cfg.kind == "stub":
            return StubGenerator()
        params = GeneratorParams(
            model=cfg.model,
            endpoint=cfg.endpoint,
            temperature=cfg.temperature,
            max_output_tokens=cfg.max_output_tokens,
            timeout_ms=cfg.timeout_ms,
            retries=cfg.retries,
            max_concurrency=cfg.max_concurrency,
        )
        return RemoteGenerator(params)

    def cells(self) -> list[RunConfig]:
        g = self.config.grid
        out = []
        for method, size_s, overlap, budget in product(g.methods, g.sizes, g.overlaps, g.budgets):
            out.append(
                RunConfig(
                    method=method,
                    size_s=size_s,
                    overlap_o=overlap,
                    budget_c=budget,
                    fill_policy=self.config.fill_policy,
                    retrieval_mode=self.config.retrieval.mode,
                    generator_kind=self.config.generator.kind,
                    semantic_threshold=self.config.semantic_threshold,
                    seed=self.config.seed,
                )
            )
        return out

    def _artifacts(self, cell: RunConfig) -> tuple[list[Chunk], Index, dict[str, Chunk]]:
        params = cell.chunk_params()
        if cell.overlap_o > 0.0 and params.overlap_o == 0.0:
            logger.info("overlap %.2f ignored for %s chunking",
                        cell.overlap_o, params.method.value)
        key = (params.method, params.size_s, params.overlap_o,
               params.semantic_threshold, cell.retrieval_mode)
        with self._artifact_lock:
            cached = self._artifact_cache.get(key)
            if cached is not None:
                return cached
            docs = [self.documents[doc_id] for doc_id in sorted(self.documents)]
            chunks = chunk_corpus(
                docs, params, embedder=self.embedder,
                tokenizer=self.tokenizer, segmenter=self.segmenter,
            )
            index = build_index(
                chunks,
                mode=cell.retrieval_mode,
                external=self.external_chunk_vectors,
                tokenizer=self.tokenizer,
                k1=self.config.retrieval.k1,
                b=self.config.retrieval.b,
            )
            lookup = {c.chunk_id: c for c in chunks}
            self._artifact_cache[key] = (chunks, index, lookup)
            return chunks, index, lookup

    def _retrieval_depth(self, cell: RunConfig) -> int:
        floor = self.config.retrieval.min_expected_chunk_tokens or max(1, cell.size_s // 4)
        return math.ceil(cell.budget_c / floor) + self.config.retrieval.k_slack

    def _query_vector(self, qa: QAPair, index: Index):
        if self.config.retrieval.mode == "external":
            return vectorize_text(qa.question, "external",
                                  external=self.external_query_vectors, text_id=qa.id)
        return index.query_vector(qa.question, self.tokenizer)

    def _score_question(
        self, cell: RunConfig, qa: QAPair, index: Index, lookup: dict[str, Chunk]
    ) -> tuple[QAOutcome, dict]:
        query = self._query_vector(qa, index)
        ranked = search(index, query, k=self._retrieval_depth(cell))
        window = assemble_context(
            ranked, lookup, cell.budget_c, policy=cell.fill_policy, tokenizer=self.tokenizer
        )
        prompt = render_prompt(qa.question, window.rendered_text)
        stats = {
            "context_chunks": len(window.chunk_ids),
            "context_tokens": window.total_tokens,
            "skipped": window.skipped_count,
            "chunk_ids": list(window.chunk_ids),
        }
        try:
            answer = self.generator.generate(prompt, gold_answers=qa.gold_answers)
        except GenerationError as exc:
            logger.warning("generation failed for %s: %s", qa.id, exc)
            outcome = QAOutcome(
                question_id=qa.id, predicted="", abstained=False,
                gold_answers=qa.gold_answers, em=None, bert_f1=None, status="error",
            )
            return outcome, stats

        if answer.abstained:
            em, bert_f1 = 0, 0.0
        else:
            em = exact_match(answer.text, qa.gold_answers)
            bert_f1 = max(
                bertscore(answer.text, gold, self.embedder, self.tokenizer).f1
                for gold in qa.gold_answers
            )
        outcome = QAOutcome(
            question_id=qa.id, predicted=answer.text, abstained=answer.abstained,
            gold_answers=qa.gold_answers, em=em, bert_f1=bert_f1, status="ok",
        )
        return outcome, stats

    def evaluate_cell(self, cell: RunConfig) -> CellResult:
        started = time.monotonic()
        fingerprint = cell.fingerprint(self.corpus_digest, self.qa_digest)
        chunks, index, lookup = self._artifacts(cell)

        workers = (
            self.config.generator.max_concurrency
            if self.config.generator.kind == "remote"
            else 1
        )
        results: dict[str, tuple[QAOutcome, dict]] = {}
        if workers > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {
                    pool.submit(self._score_question, cell, qa, index, lookup): qa.id
                    for qa in self.qa_pairs
                }
                for future in concurrent.futures.as_completed(futures):
                    results[futures[future]] = future.result()
        else:
            for qa in self.qa_pairs:
                results[qa.id] = self._score_question(cell, qa, index, lookup)

        outcomes: list[QAOutcome] = []
        records: list[dict] = []
        n_ok = n_error = n_empty = 0
        context_tokens_total = 0
        skipped_total = 0
        for qa in self.qa_pairs:  # restore question order
            outcome, stats = results[qa.id]
            outcomes.append(outcome)
            if outcome.status == "error":
                n_error += 1
            elif stats["context_chunks"] == 0:
                n_empty += 1
            else:
                n_ok += 1
            context_tokens_total += stats["context_tokens"]
            skipped_total += stats["skipped"]
            records.append(
                {
                    "question_id": outcome.question_id,
                    "predicted": outcome.predicted,
                    "abstained": outcome.abstained,
                    "em": outcome.em,
                    "bert_f1": outcome.bert_f1,
                    "status": outcome.status,
                    **stats,
                }
            )

        answered = [o for o in outcomes if o.status == "ok"]
        summaries: dict[str, MetricSummary] = {}
        error: str | None = None
        if answered:
            B, level = self.config.bootstrap.B, self.config.bootstrap.level
            for name, values in (
                ("em", [float(o.em) for o in answered]),
                ("bert_f1", [float(o.bert_f1) for o in answered]),
                ("none_ratio", [1.0 if o.abstained else 0.0 for o in answered]),
            ):
                summaries[name] = bootstrap_ci(
                    values, B=B, level=level,
                    seed=derive_seed(cell.seed, "bootstrap", name, fingerprint),
                    name=name,
                )
        else:
            error = "no answered questions in cell"

        wall = time.monotonic() - started
        logger.info(
            "cell %s done: method=%s S=%d O=%.2f C=%d ok=%d err=%d empty=%d (%.2fs)",
            fingerprint, cell.method.value, cell.size_s, cell.overlap_o,
            cell.budget_c, n_ok, n_error, n_empty, wall,
        )
        return CellResult(
            config=cell,
            fingerprint=fingerprint,
            summaries=summaries,
            n_questions=len(self.qa_pairs),
            n_ok=n_ok,
            n_error=n_error,
            n_empty_context=n_empty,
            chunk_count=len(chunks),
            oversized_count=sum(1 for c in chunks if c.oversized),
            index_terms=index.n_terms,
            index_postings=index.postings_size(),
            mean_context_tokens=context_tokens_total / max(1, len(self.qa_pairs)),
            skipped_total=skipped_total,
            wall_time_s=wall,
            records=records,
            error=error,
        )

    def _cell_path(self, fingerprint: str) -> Path | None:
        if self.out_dir is None:
            return None
        return self.out_dir / "cells" / f"{fingerprint}.json"

    def _run_one(self, cell: RunConfig, fingerprint: str) -> CellResult:
        try:
            result = self.evaluate_cell(cell)
        except ChunklabError as exc:
            logger.error("cell failed: %s (%s)", cell.as_dict(), exc)
            result = CellResult(
                config=cell, fingerprint=fingerprint, summaries={},
                n_questions=len(self.qa_pairs), n_ok=0, n_error=len(self.qa_pairs),
                n_empty_context=0, chunk_count=0, oversized_count=0,
                index_terms=0, index_postings=0, mean_context_tokens=0.0,
                skipped_total=0, wall_time_s=0.0, records=[], error=str(exc),
            )
        path = self._cell_path(fingerprint)
        if path is not None:
            path.write_text(json.dumps(result.to_dict(), ensure_ascii=False), encoding="utf-8")
        return result

    def run(self, resume: bool = False, cell_order: Sequence[int] | None = None) -> RunReport:
        started = time.monotonic()
        cells = self.cells()
        order = list(cell_order) if cell_order is not None else list(range(len(cells)))
        report = RunReport(
            config_fingerprint=self.config.fingerprint(),
            toolkit_version=__version__,
            master_seed=self.config.seed,
            fill_policy=self.config.fill_policy,
        )
        logger.info(
            "run start: %d cells, policy=%s, seed=%d, workers=%d",
            len(cells), self.config.fill_policy, self.config.seed,
            self.config.cell_workers,
        )

        results: dict[int, CellResult] = {}
        pending: list[tuple[int, RunConfig, str]] = []
        for position in order:
            cell = cells[position]
            fingerprint = cell.fingerprint(self.corpus_digest, self.qa_digest)
            path = self._cell_path(fingerprint)
            if resume and path is not None and path.exists():
                results[position] = CellResult.from_dict(json.loads(path.read_text("utf-8")))
                logger.info("cell %s loaded from cache", fingerprint)
            else:
                pending.append((position, cell, fingerprint))

        if self.config.cell_workers > 1 and len(pending) > 1:
            with concurrent.futures.ThreadPoolExecutor(
                max_workers=self.config.cell_workers
            ) as pool:
                futures = {
                    pool.submit(self._run_one, cell, fingerprint): position
                    for position, cell, fingerprint in pending
                }
                for future in concurrent.futures.as_completed(futures):
                    results[futures[future]] = future.result()
        else:
            for position, cell, fingerprint in pending:
                results[position] = self._run_one(cell, fingerprint)

        report.cells.extend(results[position] for position in order)
        report.total_wall_time_s = time.monotonic() - started
        logger.info("run finished in %.2fs", report.total_wall_time_s)
        return report


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "method", "size_s", "overlap_o", "budget_c", "fill_policy", "retrieval_mode",
    "generator_kind", "n_questions", "n_ok", "n_error", "n_empty_context",
    "chunk_count", "oversized_count", "index_terms", "index_postings",
    "mean_context_tokens", "skipped_total",
    "em_mean", "em_ci_low", "em_ci_high",
    "bert_f1_mean", "bert_f1_ci_low", "bert_f1_ci_high",
    "none_ratio_mean", "none_ratio_ci_low", "none_ratio_ci_high",
    "seed", "fingerprint",
]


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _summary_row(result: CellResult) -> dict:
    row = {
        "method": result.config.method.value,
        "size_s": result.config.size_s,
        "overlap_o": _fmt(result.config.overlap_o),
        "budget_c": result.config.budget_c,
        "fill_policy": result.config.fill_policy,
        "retrieval_mode": result.config.retrieval_mode,
        "generator_kind": result.config.generator_kind,
        "n_questions": result.n_questions,
        "n_ok": result.n_ok,
        "n_error": result.n_error,
        "n_empty_context": result.n_empty_context,
        "chunk_count": result.chunk_count,
        "oversized_count": result.oversized_count,
        "index_terms": result.index_terms,
        "index_postings": result.index_postings,
        "mean_context_tokens": _fmt(result.mean_context_tokens),
        "skipped_total": result.skipped_total,
        "seed": result.config.seed,
        "fingerprint": result.fingerprint,
    }
    for name in METRIC_NAMES:
        summary = result.summaries.get(name)
        row[f"{name}_mean"] = _fmt(summary.mean) if summary else ""
        row[f"{name}_ci_low"] = _fmt(summary.ci_low) if summary else ""
        row[f"{name}_ci_high"] = _fmt(summary.ci_high) if summary else ""
    return row


def export_report(
    report: RunReport,
    out_dir: str | Path,
    formats: Sequence[str] = ("csv", "jsonl", "plotdata"),
) -> list[Path]:
    """Write summary.csv, queries.jsonl and plotdata.json under ``out_dir``.

    The CSV and JSONL are byte-stable for a fixed report: rows are sorted by
    cell coordinates and floats use a fixed format.  Wall-clock fields stay
    out of these files (they live in report.json).
    """
    if not report.cells:
        raise ChunklabError("cannot export an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    cells = report.sorted_cells()

    if "csv" in formats:
        path = out / "summary.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for result in cells:
                writer.writerow(_summary_row(result))
        written.append(path)

    if "jsonl" in formats:
        path = out / "queries.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for result in cells:
                for record in result.records:
                    fh.write(json.dumps(
                        {"cell": result.fingerprint, **record},
                        ensure_ascii=False, sort_keys=True,
                    ) + "\n")
        written.append(path)

    if "plotdata" in formats:
        path = out / "plotdata.json"
        path.write_text(json.dumps(_plotdata(report), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        written.append(path)

    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), ensure_ascii=False), encoding="utf-8")
    written.append(report_path)
    return written


def _plotdata(report: RunReport) -> dict:
    """One series per (metric, method): x = budget, y = mean over other axes."""
    series = []
    methods = sorted({c.config.method.value for c in report.cells})
    budgets = sorted({c.config.budget_c for c in report.cells})
    for metric in METRIC_NAMES:
        for method in methods:
            xs, ys, lows, highs = [], [], [], []
            for budget in budgets:
                matching = [
                    c.summaries[metric]
                    for c in report.cells
                    if c.config.method.value == method
                    and c.config.budget_c == budget
                    and metric in c.summaries
                ]
                if not matching:
                    continue
                xs.append(budget)
                ys.append(sum(s.mean for s in matching) / len(matching))
                lows.append(sum(s.ci_low for s in matching) / len(matching))
                highs.append(sum(s.ci_high for s in matching) / len(matching))
            if xs:
                series.append(
                    {"metric": metric, "method": method,
                     "x": xs, "y": ys, "ci_low": lows, "ci_high": highs}
                )
    return {
        "config_fingerprint": report.config_fingerprint,
        "fill_policy": report.fill_policy,
        "master_seed": report.master_seed,
        "series": series,
        "toolkit_version": report.toolkit_version,
    }


def compare_cells(
    report: RunReport,
    metric: str,
    fingerprint_a: str,
    fingerprint_b: str,
    B: int = 1000,
    seed: int = 0,
) -> tuple[MetricSummary, bool]:
    """Paired per-question delta (a - b) between two cells of one report.

    Returns the delta summary and whether it falls inside the shipped
    no-measurable-difference band for that metric.
    """
    by_fp = {c.fingerprint: c for c in report.cells}
    try:
        cell_a, cell_b = by_fp[fingerprint_a], by_fp[fingerprint_b]
    except KeyError as exc:
        raise ChunklabError(f"unknown cell fingerprint {exc}") from exc

    if metric not in METRIC_NAMES:
        raise ChunklabError(f"unknown metric {metric!r}; expected one of {METRIC_NAMES}")

    def values(cell: CellResult) -> dict[str, float]:
        if metric == "none_ratio":
            return {
                r["question_id"]: float(bool(r["abstained"]))
                for r in cell.records
                if r["status"] == "ok"
            }
        return {
            r["question_id"]: float(r[metric])
            for r in cell.records
            if r["status"] == "ok" and r.get(metric) is not None
        }

    va, vb = values(cell_a), values(cell_b)
    shared = sorted(set(va) & set(vb))
    if not shared:
        raise UndefinedMetricError("no shared answered questions between cells")
    delta = paired_delta_ci(
        [va[q] for q in shared], [vb[q] for q in shared],
        B=B, seed=seed, name=f"delta_{metric}",
    )
    return delta, no_measurable_difference(delta, metric)


def run_grid(
    config_file: str | Path,
    out_dir: str | Path | None = None,
    resume: bool = False,
    stub_generator: bool = False,
    policy: str | None = None,
    formats: Sequence[str] = ("csv", "jsonl", "plotdata"),
) -> RunReport:
    """Load a config file, execute the grid, and export report files."""
    config = load_grid_config(config_file)
    if stub_generator:
        config = config.model_copy(update={
            "generator": config.generator.model_copy(update={"kind": "stub"})
        })
    if policy is not None:
        if policy not in ("stop", "skip"):
            raise ConfigError(f"unknown fill policy {policy!r}")
        config = config.model_copy(update={"fill_policy": policy})
    runner = Runner(config, out_dir=out_dir)
    report = runner.run(resume=resume)
    if out_dir is not None:
        export_report(report, out_dir, formats=formats)
    return report
