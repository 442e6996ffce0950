"""Four document chunking strategies parameterized by target size and overlap.

* token: fixed-size sliding windows of ``size_s`` tokens with stride
  ``size_s - overlap_tokens``; the final window may be shorter.
* sentence: greedily packs whole sentences up to ``size_s`` tokens; a single
  sentence longer than the target becomes its own chunk, flagged oversized.
* semantic: sentence-preserving; the next sentence joins the current chunk
  only when its embedding is similar enough to the last appended sentence
  and the merged size stays within ``size_s``.
* code: splits markdown at structural boundaries (headings, fenced blocks,
  thematic breaks, top-level declarations inside fences); structural units
  larger than ``size_s`` are re-wrapped by the token chunker with no overlap.

Overlap only applies to the token method; the token count of a chunk always
equals ``count_tokens(chunk.text)`` and its [start, end) byte span slices the
source document back to exactly ``chunk.text``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import (
    DEFAULT_SEGMENTER,
    DEFAULT_TOKENIZER,
    Document,
    SentenceSegmenter,
    SentenceSpan,
    Tokenizer,
    byte_slice,
)
from .embedding import EmbeddingProvider, cosine
from .errors import DomainError, EmbeddingError, IngestError

logger = logging.getLogger(__name__)


class ChunkMethod(str, Enum):
    TOKEN = "token"
    SENTENCE = "sentence"
    SEMANTIC = "semantic"
    CODE = "code"


@dataclass(frozen=True)
class ChunkParams:
    """Chunking strategy coordinates: method, target size, overlap fraction."""

    method: ChunkMethod
    size_s: int
    overlap_o: float = 0.0
    semantic_threshold: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", ChunkMethod(self.method))
        if self.size_s < 10:
            raise DomainError(f"size_s must be >= 10, got {self.size_s}")
        if not (0.0 <= self.overlap_o < 0.5):
            raise DomainError(f"overlap_o must be in [0, 0.5), got {self.overlap_o}")
        if not (-1.0 < self.semantic_threshold < 1.0):
            raise DomainError(f"semantic_threshold must be in (-1, 1), got {self.semantic_threshold}")

    @property
    def overlap_tokens(self) -> int:
        return round(self.size_s * self.overlap_o)

    @property
    def overlap_ratio(self) -> float:
        return self.overlap_o

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "method": self.method.value,
                "size_s": self.size_s,
                "overlap_o": self.overlap_o,
                "semantic_threshold": self.semantic_threshold,
            },
            sort_keys=True,
        )
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=6).hexdigest()


@dataclass(frozen=True)
class Chunk:
    """A contiguous, token-counted segment of one document."""

    chunk_id: str
    doc_id: str
    start: int  # byte offset into the document text
    end: int
    text: str
    token_count: int
    method: ChunkMethod
    params_fingerprint: str
    oversized: bool = False


def expected_chunk_inflation(r: float) -> float:
    """Chunk count multiplier caused by overlap ratio ``r``: 1 / (1 - r)."""
    if not (0.0 <= r < 1.0):
        raise DomainError(f"overlap ratio must be in [0, 1), got {r}")
    return 1.0 / (1.0 - r)


def _chunk_id(doc_id: str, start: int, end: int, fingerprint: str) -> str:
    payload = f"{doc_id}\x00{start}\x00{end}\x00{fingerprint}"
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=8).hexdigest()


def _make_chunk(
    doc: Document,
    raw: bytes,
    start: int,
    end: int,
    token_count: int,
    params: ChunkParams,
    oversized: bool = False,
) -> Chunk:
    fp = params.fingerprint()
    return Chunk(
        chunk_id=_chunk_id(doc.id, start, end, fp),
        doc_id=doc.id,
        start=start,
        end=end,
        text=byte_slice(raw, start, end),
        token_count=token_count,
        method=params.method,
        params_fingerprint=fp,
        oversized=oversized,
    )


def _warn_ignored_overlap(params: ChunkParams) -> None:
    if params.overlap_o > 0.0:
        logger.warning(
            "overlap_o=%.2f only applies to token chunking; ignored for %s",
            params.overlap_o,
            params.method.value,
        )


def chunk_token(doc: Document, params: ChunkParams, tokenizer: Tokenizer | None = None) -> list[Chunk]:
    """Sliding token windows covering every token at least once."""
    if params.method is not ChunkMethod.TOKEN:
        raise DomainError(f"chunk_token called with method {params.method.value!r}")
    tok = tokenizer or DEFAULT_TOKENIZER
    spans = tok.spans(doc.text)
    if not spans:
        return []
    raw = doc.text.encode("utf-8")
    stride = params.size_s - params.overlap_tokens
    chunks: list[Chunk] = []
    start = 0
    n = len(spans)
    while True:
        end = min(start + params.size_s, n)
        chunks.append(
            _make_chunk(doc, raw, spans[start].start, spans[end - 1].end, end - start, params)
        )
        if end == n:
            break
        start += stride
    return chunks


def _pack_sentences(
    doc: Document,
    params: ChunkParams,
    groups: Iterable[list[SentenceSpan]],
) -> list[Chunk]:
    raw = doc.text.encode("utf-8")
    chunks = []
    for group in groups:
        total = sum(s.token_count for s in group)
        chunks.append(
            _make_chunk(
                doc,
                raw,
                group[0].start,
                group[-1].end,
                total,
                params,
                oversized=total > params.size_s,
            )
        )
    return chunks


def chunk_sentence(
    doc: Document,
    params: ChunkParams,
    tokenizer: Tokenizer | None = None,
    segmenter: SentenceSegmenter | None = None,
) -> list[Chunk]:
    """Greedy sentence packing: whole sentences, never split."""
    if params.method is not ChunkMethod.SENTENCE:
        raise DomainError(f"chunk_sentence called with method {params.method.value!r}")
    _warn_ignored_overlap(params)
    seg = segmenter or (SentenceSegmenter(tokenizer=tokenizer) if tokenizer else DEFAULT_SEGMENTER)
    sentences = seg.segment(doc.text)
    if not sentences:
        return []

    groups: list[list[SentenceSpan]] = []
    current: list[SentenceSpan] = []
    current_tokens = 0
    for sentence in sentences:
        if current and current_tokens + sentence.token_count > params.size_s:
            groups.append(current)
            current = []
            current_tokens = 0
        current.append(sentence)
        current_tokens += sentence.token_count
    groups.append(current)
    return _pack_sentences(doc, params, groups)


SEMANTIC_ANCHORS = ("last", "first", "centroid")


def chunk_semantic(
    doc: Document,
    params: ChunkParams,
    embedder: EmbeddingProvider,
    tokenizer: Tokenizer | None = None,
    segmenter: SentenceSegmenter | None = None,
    anchor: str = "last",
) -> list[Chunk]:
    """Sentence-preserving merge of adjacent, similar sentences.

    The next sentence joins the current chunk iff its embedding's cosine to
    the anchor exceeds the threshold and the merged token count stays within
    the target size.  The anchor defaults to the last appended sentence;
    "first" and "centroid" (mean of the chunk's sentence embeddings) are the
    alternatives.
    """
    if params.method is not ChunkMethod.SEMANTIC:
        raise DomainError(f"chunk_semantic called with method {params.method.value!r}")
    if anchor not in SEMANTIC_ANCHORS:
        raise DomainError(f"unknown semantic anchor {anchor!r}")
    _warn_ignored_overlap(params)
    seg = segmenter or (SentenceSegmenter(tokenizer=tokenizer) if tokenizer else DEFAULT_SEGMENTER)
    sentences = seg.segment(doc.text)
    if not sentences:
        return []

    raw = doc.text.encode("utf-8")
    texts = [byte_slice(raw, s.start, s.end) for s in sentences]
    vectors = []
    try:
        for i in range(0, len(texts), embedder.batch_size):
            vectors.extend(embedder.embed(texts[i : i + embedder.batch_size]))
    except Exception as exc:
        raise EmbeddingError(f"embedding failed for document {doc.id!r}: {exc}") from exc

    groups: list[list[SentenceSpan]] = []
    current = [sentences[0]]
    current_first = 0
    current_tokens = sentences[0].token_count
    for i in range(1, len(sentences)):
        nxt = sentences[i]
        if anchor == "last":
            anchor_vec = vectors[i - 1]
        elif anchor == "first":
            anchor_vec = vectors[current_first]
        else:
            anchor_vec = np.mean(vectors[current_first:i], axis=0)
        fits = current_tokens + nxt.token_count <= params.size_s
        usable = float(np.linalg.norm(anchor_vec)) > 0.0  # opposed vectors can cancel
        similar = fits and usable and cosine(anchor_vec, vectors[i]) > params.semantic_threshold
        if similar:
            current.append(nxt)
            current_tokens += nxt.token_count
        else:
            groups.append(current)
            current = [nxt]
            current_first = i
            current_tokens = nxt.token_count
    groups.append(current)
    return _pack_sentences(doc, params, groups)


_HEADING_RE = re.compile(r"#{1,6}[ \t]")
_THEMATIC_RE = re.compile(r"(-{3,}|\*{3,}|_{3,})[ \t]*$")
_FENCE_RE = re.compile(r"(`{3,}|~{3,})")
_DECL_RE = re.compile(r"(async[ \t]+def|def|class|function|func|fn)\b")


def _code_unit_starts(text: str) -> list[int]:
    """Char offsets where a new structural unit of markdown/code begins."""
    starts: list[int] = []
    fence_marker: str | None = None
    fence_content_seen = False
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if fence_marker is None:
            fence = _FENCE_RE.match(stripped)
            if fence:
                fence_marker = fence.group(1)[0] * 3
                fence_content_seen = False
                starts.append(offset)
            elif _HEADING_RE.match(stripped):
                starts.append(offset)
            elif _THEMATIC_RE.fullmatch(stripped):
                starts.append(offset)
        else:
            if stripped.startswith(fence_marker):
                fence_marker = None  # closing fence stays with the current unit
            elif _DECL_RE.match(line):
                # A declaration right after the opening fence keeps the fence
                # line in its own unit; later declarations start new units.
                if fence_content_seen:
                    starts.append(offset)
                fence_content_seen = True
            elif stripped:
                fence_content_seen = True
        offset += len(line)
    return starts


def chunk_code(doc: Document, params: ChunkParams, tokenizer: Tokenizer | None = None) -> list[Chunk]:
    """Markdown-structure chunking with a token-window fallback for big units."""
    if params.method is not ChunkMethod.CODE:
        raise DomainError(f"chunk_code called with method {params.method.value!r}")
    _warn_ignored_overlap(params)
    tok = tokenizer or DEFAULT_TOKENIZER
    spans = tok.spans(doc.text)
    if not spans:
        return []
    raw = doc.text.encode("utf-8")
    offs = None if doc.text.isascii() else _char_prefix(doc.text)

    starts = sorted(set(_code_unit_starts(doc.text)) | {0})
    bounds = [(s if offs is None else offs[s]) for s in starts] + [len(raw)]

    chunks: list[Chunk] = []
    token_pos = 0
    n = len(spans)
    for i in range(len(bounds) - 1):
        unit_end_byte = bounds[i + 1]
        first = token_pos
        while token_pos < n and spans[token_pos].end <= unit_end_byte:
            token_pos += 1
        unit_spans = spans[first:token_pos]
        if not unit_spans:
            continue
        if len(unit_spans) <= params.size_s:
            chunks.append(
                _make_chunk(doc, raw, unit_spans[0].start, unit_spans[-1].end, len(unit_spans), params)
            )
            continue
        # Oversized structural unit: token-wrap it with no overlap.
        for w in range(0, len(unit_spans), params.size_s):
            window = unit_spans[w : w + params.size_s]
            chunks.append(
                _make_chunk(doc, raw, window[0].start, window[-1].end, len(window), params)
            )
    return chunks


def _char_prefix(text: str) -> list[int]:
    offs = [0] * (len(text) + 1)
    pos = 0
    for i, ch in enumerate(text):
        offs[i] = pos
        pos += len(ch.encode("utf-8"))
    offs[len(text)] = pos
    return offs


def chunk_document(
    doc: Document,
    params: ChunkParams,
    embedder: EmbeddingProvider | None = None,
    tokenizer: Tokenizer | None = None,
    segmenter: SentenceSegmenter | None = None,
) -> list[Chunk]:
    """Dispatch to the chunker selected by ``params.method``."""
    if params.method is ChunkMethod.TOKEN:
        return chunk_token(doc, params, tokenizer)
    if params.method is ChunkMethod.SENTENCE:
        return chunk_sentence(doc, params, tokenizer, segmenter)
    if params.method is ChunkMethod.SEMANTIC:
        if embedder is None:
            raise DomainError("semantic chunking requires an embedding provider")
        return chunk_semantic(doc, params, embedder, tokenizer, segmenter)
    return chunk_code(doc, params, tokenizer)


def chunk_corpus(
    documents: Iterable[Document],
    params: ChunkParams,
    embedder: EmbeddingProvider | None = None,
    tokenizer: Tokenizer | None = None,
    segmenter: SentenceSegmenter | None = None,
) -> list[Chunk]:
    out: list[Chunk] = []
    for doc in documents:
        out.extend(chunk_document(doc, params, embedder, tokenizer, segmenter))
    return out


def write_chunks_jsonl(chunks: Sequence[Chunk], path: str | Path, inline_text: bool = False) -> None:
    """Dump chunks as JSONL; text is reproducible from the corpus and spans,
    or inlined on request."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for chunk in chunks:
            record = {
                "chunk_id": chunk.chunk_id,
                "doc_id": chunk.doc_id,
                "start": chunk.start,
                "end": chunk.end,
                "token_count": chunk.token_count,
                "method": chunk.method.value,
                "oversized": chunk.oversized,
            }
            if inline_text:
                record["text"] = chunk.text
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_chunks_jsonl(
    path: str | Path,
    documents: Mapping[str, Document] | None = None,
    params_fingerprint: str = "",
) -> list[Chunk]:
    """Read a chunk dump; non-inlined text is re-sliced from ``documents``."""
    chunks: list[Chunk] = []
    raw_cache: dict[str, bytes] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            text = record.get("text")
            if text is None:
                if documents is None or record["doc_id"] not in documents:
                    raise IngestError(
                        f"{Path(path).name}:{line_no}: chunk text not inlined and "
                        f"document {record['doc_id']!r} unavailable"
                    )
                doc = documents[record["doc_id"]]
                raw = raw_cache.setdefault(doc.id, doc.text.encode("utf-8"))
                text = byte_slice(raw, record["start"], record["end"])
            chunks.append(
                Chunk(
                    chunk_id=record["chunk_id"],
                    doc_id=record["doc_id"],
                    start=record["start"],
                    end=record["end"],
                    text=text,
                    token_count=record["token_count"],
                    method=ChunkMethod(record["method"]),
                    params_fingerprint=record.get("params_fingerprint", params_fingerprint),
                    oversized=record.get("oversized", False),
                )
            )
    return chunks
