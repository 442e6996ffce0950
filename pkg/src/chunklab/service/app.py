"""FastAPI service wrapping the core pipeline.

Endpoints mirror the CLI verbs: ingest a corpus, chunk it, build an index,
search it, launch a grid run, poll and export the report.  Grid runs execute
on background threads so long evaluations do not block the event loop; poll
``GET /runs/{run_id}`` until the state is ``finished``.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..chunking import ChunkParams, chunk_corpus, write_chunks_jsonl
from ..embedding import DeterministicEmbeddingProvider
from ..errors import ChunklabError
from ..corpus import ingest_corpus
from ..retrieval import ExternalVectors, build_index, save_index, search, vectorize_text
from ..runner import (
    RECOMMENDED_DEFAULTS,
    GridConfig,
    Runner,
    export_report,
    grid_config_schema,
)
from .schemas import (
    ChunkRequest,
    ChunkSetInfo,
    CorpusInfo,
    DefaultsResponse,
    ExportRequest,
    ExportResponse,
    HealthResponse,
    Hit,
    IndexInfo,
    IndexRequest,
    IngestRequest,
    RunRequest,
    RunStatus,
    SearchRequest,
    SearchResponse,
)
from .state import AppState, BuiltIndex, ChunkSet, RunJob

logger = logging.getLogger(__name__)


def create_app(state: AppState | None = None) -> FastAPI:
    app = FastAPI(title="chunklab", version=__version__)
    app.state.registry = state or AppState()

    def registry() -> AppState:
        return app.state.registry

    @app.exception_handler(ChunklabError)
    async def chunklab_error_handler(_request, exc: ChunklabError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/defaults", response_model=DefaultsResponse)
    def defaults() -> DefaultsResponse:
        return DefaultsResponse(rows=list(RECOMMENDED_DEFAULTS))

    @app.get("/config/run-schema")
    def run_schema() -> dict:
        return grid_config_schema()

    @app.post("/corpora", response_model=CorpusInfo)
    def ingest(request: IngestRequest) -> CorpusInfo:
        reg = registry()
        handle = ingest_corpus(request.path, request.kind)
        with reg.lock:
            corpus_id = request.corpus_id or reg.new_id("corpus")
            if corpus_id in reg.corpora:
                raise HTTPException(status_code=409, detail=f"corpus {corpus_id!r} already exists")
            reg.corpora[corpus_id] = handle
        return CorpusInfo(
            corpus_id=corpus_id, kind=handle.kind, count=handle.count,
            digest=handle.digest, path=str(handle.path),
        )

    @app.get("/corpora", response_model=list[CorpusInfo])
    def list_corpora() -> list[CorpusInfo]:
        reg = registry()
        return [
            CorpusInfo(corpus_id=cid, kind=h.kind, count=h.count, digest=h.digest, path=str(h.path))
            for cid, h in sorted(reg.corpora.items())
        ]

    def _get_or_404(table: dict, key: str, what: str):
        found = table.get(key)
        if found is None:
            raise HTTPException(status_code=404, detail=f"unknown {what} {key!r}")
        return found

    @app.post("/chunks", response_model=ChunkSetInfo)
    def chunk(request: ChunkRequest) -> ChunkSetInfo:
        reg = registry()
        handle = _get_or_404(reg.corpora, request.corpus_id, "corpus")
        if handle.kind != "documents":
            raise HTTPException(status_code=400, detail="can only chunk a documents corpus")
        params = ChunkParams(
            method=request.method,
            size_s=request.size_s,
            overlap_o=request.overlap_o,
            semantic_threshold=request.semantic_threshold,
        )
        docs = [handle.documents[k] for k in sorted(handle.documents)]
        embedder = DeterministicEmbeddingProvider(dim=request.embedding_dim)
        chunks = chunk_corpus(docs, params, embedder=embedder)
        if request.out:
            write_chunks_jsonl(chunks, request.out, inline_text=request.inline_text)
        with reg.lock:
            chunkset_id = reg.new_id("chunks")
            reg.chunksets[chunkset_id] = ChunkSet(
                chunkset_id=chunkset_id,
                corpus_id=request.corpus_id,
                method=request.method.value,
                chunks=chunks,
                lookup={c.chunk_id: c for c in chunks},
            )
        return ChunkSetInfo(
            chunkset_id=chunkset_id,
            corpus_id=request.corpus_id,
            method=request.method,
            chunk_count=len(chunks),
            oversized_count=sum(1 for c in chunks if c.oversized),
            out=request.out,
        )

    @app.post("/indexes", response_model=IndexInfo)
    def index(request: IndexRequest) -> IndexInfo:
        reg = registry()
        chunkset = _get_or_404(reg.chunksets, request.chunkset_id, "chunkset")
        external = ExternalVectors.load(request.chunk_vectors) if request.chunk_vectors else None
        built = build_index(
            chunkset.chunks, mode=request.mode, external=external,
            k1=request.k1, b=request.b,
        )
        if request.out:
            save_index(built, request.out)
        with reg.lock:
            index_id = reg.new_id("index")
            reg.indexes[index_id] = BuiltIndex(
                index_id=index_id, chunkset_id=request.chunkset_id,
                index=built, lookup=chunkset.lookup,
            )
        return IndexInfo(
            index_id=index_id,
            chunkset_id=request.chunkset_id,
            mode=built.mode,
            n_chunks=built.n_chunks,
            n_terms=built.n_terms,
            postings=built.postings_size(),
            avg_token_count=built.avg_len,
            out=request.out,
        )

    @app.post("/indexes/{index_id}/search", response_model=SearchResponse)
    def search_index(index_id: str, request: SearchRequest) -> SearchResponse:
        reg = registry()
        built = _get_or_404(reg.indexes, index_id, "index")
        if built.index.mode == "bm25":
            if not request.query:
                raise HTTPException(status_code=400, detail="bm25 search needs a query string")
            vector = built.index.query_vector(request.query)
        else:
            if not (request.query_vectors and request.query_id):
                raise HTTPException(
                    status_code=400,
                    detail="external search needs query_vectors path and query_id",
                )
            store = ExternalVectors.load(request.query_vectors)
            vector = vectorize_text("", "external", external=store, text_id=request.query_id)
        ranked = search(built.index, vector, k=request.k)
        return SearchResponse(hits=[Hit(chunk_id=c, score=s) for c, s in ranked.hits])

    def _run_job(job: RunJob, config: GridConfig, resume: bool) -> None:
        try:
            runner = Runner(config, out_dir=job.out_dir)
            report = runner.run(resume=resume)
            export_report(report, job.out_dir)
            job.report = report
            job.state = "finished"
        except Exception as exc:  # surface any failure through the job status
            logger.exception("run %s failed", job.run_id)
            job.error = str(exc)
            job.state = "failed"

    @app.post("/runs", response_model=RunStatus)
    def start_run(request: RunRequest) -> RunStatus:
        reg = registry()
        config = request.config
        if request.stub_generator:
            config = config.model_copy(update={
                "generator": config.generator.model_copy(update={"kind": "stub"})
            })
        if request.policy is not None:
            config = config.model_copy(update={"fill_policy": request.policy})
        grid = config.grid
        total = len(grid.methods) * len(grid.sizes) * len(grid.overlaps) * len(grid.budgets)

        with reg.lock:
            run_id = reg.new_id("run")
            job = RunJob(run_id=run_id, out_dir=Path(request.out_dir), total_cells=total)
            reg.runs[run_id] = job
        thread = threading.Thread(
            target=_run_job, args=(job, config, request.resume), daemon=True
        )
        job.thread = thread
        thread.start()
        return _status(job)

    def _status(job: RunJob) -> RunStatus:
        return RunStatus(
            run_id=job.run_id,
            state=job.state,
            total_cells=job.total_cells,
            completed_cells=min(job.completed_cells, job.total_cells),
            out_dir=str(job.out_dir),
            error=job.error,
        )

    @app.get("/runs/{run_id}", response_model=RunStatus)
    def run_status(run_id: str) -> RunStatus:
        return _status(_get_or_404(registry().runs, run_id, "run"))

    @app.get("/runs/{run_id}/report")
    def run_report(run_id: str) -> dict:
        job = _get_or_404(registry().runs, run_id, "run")
        if job.state == "failed":
            raise HTTPException(status_code=409, detail=f"run failed: {job.error}")
        if job.state != "finished" or job.report is None:
            raise HTTPException(status_code=409, detail="run is still in progress")
        return job.report.to_dict()

    @app.post("/runs/{run_id}/export", response_model=ExportResponse)
    def run_export(run_id: str, request: ExportRequest) -> ExportResponse:
        job = _get_or_404(registry().runs, run_id, "run")
        if job.state != "finished" or job.report is None:
            raise HTTPException(status_code=409, detail="run is not finished")
        files = export_report(job.report, job.out_dir, formats=request.formats)
        return ExportResponse(files=[str(f) for f in files])

    return app


app = create_app()
