"""Sparse inverted-index retrieval over chunks.

Two weighting modes share one index structure and one scoring rule (sparse
dot product):

* ``bm25``, the offline default.  A corpus-wide term dictionary is built
  from lowercased tokenizer output; postings carry BM25 weights
  (k1=1.2, b=0.75 unless overridden) and queries carry raw term counts.
* ``external``, learned-sparse integration by ingestion, not inference:
  per-chunk and per-query vectors are loaded from JSONL files of
  ``{"id": ..., "vector": [[term_id, weight], ...]}`` records.

After :func:`build_index` the index is frozen: search only reads it and is
safe for arbitrary concurrent callers.  :func:`save_index` /
:func:`load_index` persist it to a single binary file (magic ``CLIX1``);
the exact layout is documented in ``docs/index_format.md``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .chunking import Chunk
from .corpus import DEFAULT_TOKENIZER, Tokenizer, byte_slice
from .errors import DomainError, IndexFormatError, IntegrityError, VectorLookupError

INDEX_MAGIC = b"CLIX1"
INDEX_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


@dataclass(frozen=True)
class SparseVector:
    """Sorted (term_id, weight) pairs; weights strictly positive."""

    entries: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        last = -1
        for term_id, weight in self.entries:
            if term_id <= last:
                raise DomainError("sparse vector entries must be strictly ascending by term_id")
            if term_id < 0:
                raise DomainError("term ids must be non-negative")
            if not (weight > 0.0 and math.isfinite(weight)):
                raise DomainError(f"weights must be finite and > 0, got {weight}")
            last = term_id

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "SparseVector":
        """Build from unordered pairs, summing duplicates and dropping zeros."""
        acc: dict[int, float] = {}
        for term_id, weight in pairs:
            acc[term_id] = acc.get(term_id, 0.0) + float(weight)
        entries = tuple((t, w) for t, w in sorted(acc.items()) if w > 0.0)
        return cls(entries)

    def dot(self, other: "SparseVector") -> float:
        a, b = self.entries, other.entries
        i = j = 0
        total = 0.0
        while i < len(a) and j < len(b):
            ta, tb = a[i][0], b[j][0]
            if ta == tb:
                total += a[i][1] * b[j][1]
                i += 1
                j += 1
            elif ta < tb:
                i += 1
            else:
                j += 1
        return total

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class RankedList:
    """Search hits sorted by descending score, ties by ascending chunk_id."""

    hits: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        seen = set()
        prev: tuple[float, str] | None = None
        for chunk_id, score in self.hits:
            if chunk_id in seen:
                raise IntegrityError(f"duplicate chunk id in ranking: {chunk_id}")
            seen.add(chunk_id)
            key = (-score, chunk_id)
            if prev is not None and key < prev:
                raise IntegrityError("ranked list is not sorted")
            prev = key

    def __len__(self) -> int:
        return len(self.hits)


def weight_bm25(
    tf: int,
    df: int,
    N: int,
    doc_len: int,
    avg_len: float,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """BM25 term weight: idf(df, N) * tf * (k1 + 1) / (tf + k1 * norm).

    idf = ln(1 + (N - df + 0.5) / (df + 0.5)); norm = 1 - b + b * doc_len / avg_len.
    """
    if tf < 0 or df < 1 or N < 1 or df > N or doc_len < 1 or avg_len <= 0:
        raise DomainError(
            f"bad bm25 inputs: tf={tf} df={df} N={N} doc_len={doc_len} avg_len={avg_len}"
        )
    if tf == 0:
        return 0.0
    idf = math.log(1.0 + (N - df + 0.5) / (df + 0.5))
    norm = 1.0 - b + b * doc_len / avg_len
    return idf * tf * (k1 + 1.0) / (tf + k1 * norm)


class TermDictionary:
    """Corpus-wide term -> id mapping, frozen after index build."""

    def __init__(self) -> None:
        self._ids: dict[str, int] = {}
        self.frozen = False

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, term: str) -> bool:
        return term in self._ids

    def id_for(self, term: str, add: bool = False) -> int | None:
        found = self._ids.get(term)
        if found is None and add:
            if self.frozen:
                raise IntegrityError("term dictionary is frozen")
            found = len(self._ids)
            self._ids[term] = found
        return found

    def items(self):
        return self._ids.items()


class ExternalVectors:
    """Sparse vectors loaded from a JSONL file, looked up by id."""

    def __init__(self, table: dict[str, SparseVector]):
        self._table = table

    @classmethod
    def load(cls, path: str | Path) -> "ExternalVectors":
        table: dict[str, SparseVector] = {}
        with Path(path).open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                try:
                    vec = SparseVector.from_pairs((int(t), float(w)) for t, w in record["vector"])
                    table[record["id"]] = vec
                except (KeyError, TypeError, ValueError) as exc:
                    raise VectorLookupError(
                        f"{Path(path).name}:{line_no}: bad vector record ({exc})"
                    ) from exc
        return cls(table)

    def get(self, item_id: str) -> SparseVector:
        vec = self._table.get(item_id)
        if vec is None:
            raise VectorLookupError(f"no external vector for id {item_id!r}")
        return vec

    def __len__(self) -> int:
        return len(self._table)


def _term_counts(text: str, dictionary: TermDictionary, add: bool, tokenizer: Tokenizer) -> SparseVector:
    raw = text.encode("utf-8")
    pairs = []
    for span in tokenizer.spans(text):
        term = byte_slice(raw, span.start, span.end).lower()
        term_id = dictionary.id_for(term, add=add)
        if term_id is not None:
            pairs.append((term_id, 1.0))
    return SparseVector.from_pairs(pairs)


def vectorize_text(
    text: str,
    mode: str = "bm25",
    dictionary: TermDictionary | None = None,
    external: ExternalVectors | None = None,
    text_id: str | None = None,
    tokenizer: Tokenizer | None = None,
    add_terms: bool = False,
) -> SparseVector:
    """Sparse representation of one text (or, in external mode, one id).

    bm25 mode counts lowercased tokenizer terms against ``dictionary`` (raw
    term frequencies, unweighted); external mode returns the stored vector
    for ``text_id`` and fails loudly when it is missing.
    """
    if mode == "bm25":
        if dictionary is None:
            raise DomainError("bm25 vectorization needs a term dictionary")
        return _term_counts(text, dictionary, add_terms, tokenizer or DEFAULT_TOKENIZER)
    if mode == "external":
        if external is None:
            raise DomainError("external vectorization needs a loaded vector store")
        return external.get(text_id if text_id is not None else text)
    raise DomainError(f"unknown vectorization mode {mode!r}")


@dataclass
class Index:
    """Frozen inverted index: postings plus per-chunk metadata."""

    mode: str
    postings: dict[int, list[tuple[int, float]]]
    chunk_ids: list[str]
    token_counts: list[int]
    avg_len: float
    terms: TermDictionary | None = None
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    _ref_by_id: dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def n_chunks(self) -> int:
        return len(self.chunk_ids)

    @property
    def n_terms(self) -> int:
        return len(self.terms) if self.terms is not None else len(self.postings)

    def postings_size(self) -> int:
        return sum(len(lst) for lst in self.postings.values())

    def query_vector(self, query: str, tokenizer: Tokenizer | None = None) -> SparseVector:
        """bm25-mode query vectorization against this index's dictionary."""
        if self.mode != "bm25" or self.terms is None:
            raise DomainError("query_vector is only available on bm25 indexes")
        return _term_counts(query, self.terms, False, tokenizer or DEFAULT_TOKENIZER)


def build_index(
    chunks: Sequence[Chunk],
    mode: str = "bm25",
    external: ExternalVectors | None = None,
    tokenizer: Tokenizer | None = None,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> Index:
    """Build the inverted index over ``chunks``; freezes on return."""
    if not chunks:
        raise DomainError("cannot index an empty chunk list")
    if mode not in ("bm25", "external"):
        raise DomainError(f"unknown index mode {mode!r}")

    chunk_ids: list[str] = []
    token_counts: list[int] = []
    seen: set[str] = set()
    for chunk in chunks:
        if chunk.chunk_id in seen:
            raise IntegrityError(f"duplicate chunk id {chunk.chunk_id!r}")
        seen.add(chunk.chunk_id)
        chunk_ids.append(chunk.chunk_id)
        token_counts.append(chunk.token_count)

    N = len(chunks)
    avg_len = sum(token_counts) / N
    postings: dict[int, list[tuple[int, float]]] = {}
    terms: TermDictionary | None = None

    if mode == "bm25":
        terms = TermDictionary()
        tok = tokenizer or DEFAULT_TOKENIZER
        counts = [_term_counts(chunk.text, terms, True, tok) for chunk in chunks]
        df: dict[int, int] = {}
        for vec in counts:
            for term_id, _ in vec.entries:
                df[term_id] = df.get(term_id, 0) + 1
        for ref, vec in enumerate(counts):
            doc_len = max(1, token_counts[ref])
            for term_id, tf in vec.entries:
                weight = weight_bm25(int(tf), df[term_id], N, doc_len, avg_len, k1, b)
                if weight > 0.0:
                    postings.setdefault(term_id, []).append((ref, weight))
        terms.frozen = True
    else:
        if external is None:
            raise DomainError("external mode needs a loaded vector store")
        for ref, chunk in enumerate(chunks):
            for term_id, weight in external.get(chunk.chunk_id).entries:
                postings.setdefault(term_id, []).append((ref, weight))

    for lst in postings.values():
        lst.sort(key=lambda pair: pair[0])

    return Index(
        mode=mode,
        postings=postings,
        chunk_ids=chunk_ids,
        token_counts=token_counts,
        avg_len=avg_len,
        terms=terms,
        k1=k1,
        b=b,
        _ref_by_id={cid: ref for ref, cid in enumerate(chunk_ids)},
    )


def search(index: Index, query: SparseVector, k: int = 10) -> RankedList:
    """Top-k chunks by sparse dot product; zero-scoring chunks are dropped.

    Ties are broken by ascending chunk id, making rankings fully
    deterministic for equal scores.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if not query.entries:
        return RankedList(())
    scores: dict[int, float] = {}
    for term_id, q_weight in query.entries:
        for ref, c_weight in index.postings.get(term_id, ()):
            scores[ref] = scores.get(ref, 0.0) + q_weight * c_weight
    scored = [(index.chunk_ids[ref], s) for ref, s in scores.items() if s > 0.0]
    scored.sort(key=lambda hit: (-hit[1], hit[0]))
    return RankedList(tuple(scored[:k]))


def save_index(index: Index, path: str | Path) -> None:
    """Write the index to a single little-endian binary file."""
    with Path(path).open("wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<HB", INDEX_VERSION, 0 if index.mode == "bm25" else 1))
        fh.write(struct.pack("<Id", index.n_chunks, index.avg_len))
        fh.write(struct.pack("<dd", index.k1, index.b))

        term_items = sorted(index.terms.items(), key=lambda kv: kv[1]) if index.terms else []
        fh.write(struct.pack("<I", len(term_items)))
        for term, _ in term_items:
            raw = term.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)

        for chunk_id, token_count in zip(index.chunk_ids, index.token_counts):
            raw = chunk_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", token_count))

        fh.write(struct.pack("<I", len(index.postings)))
        for term_id in sorted(index.postings):
            lst = index.postings[term_id]
            fh.write(struct.pack("<II", term_id, len(lst)))
            for ref, weight in lst:
                fh.write(struct.pack("<Id", ref, weight))


def load_index(path: str | Path) -> Index:
    """Read an index produced by :func:`save_index`."""
    raw = Path(path).read_bytes()
    if raw[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise IndexFormatError(f"{path}: bad magic bytes")
    pos = len(INDEX_MAGIC)

    def unpack(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise IndexFormatError(f"{path}: truncated file")
        values = struct.unpack_from(fmt, raw, pos)
        pos += size
        return values

    version, mode_flag = unpack("<HB")
    if version != INDEX_VERSION:
        raise IndexFormatError(f"{path}: unsupported version {version}")
    n_chunks, avg_len = unpack("<Id")
    k1, b = unpack("<dd")

    (n_terms,) = unpack("<I")
    terms: TermDictionary | None = None
    if mode_flag == 0:
        terms = TermDictionary()
        for _ in range(n_terms):
            (length,) = unpack("<H")
            term = raw[pos : pos + length].decode("utf-8")
            pos += length
            terms.id_for(term, add=True)
        terms.frozen = True
    else:
        for _ in range(n_terms):
            (length,) = unpack("<H")
            pos += length

    chunk_ids: list[str] = []
    token_counts: list[int] = []
    for _ in range(n_chunks):
        (length,) = unpack("<H")
        chunk_ids.append(raw[pos : pos + length].decode("utf-8"))
        pos += length
        (count,) = unpack("<I")
        token_counts.append(count)

    (n_lists,) = unpack("<I")
    postings: dict[int, list[tuple[int, float]]] = {}
    for _ in range(n_lists):
        term_id, length = unpack("<II")
        lst: list[tuple[int, float]] = []
        for _ in range(length):
            ref, weight = unpack("<Id")
            lst.append((ref, weight))
        postings[term_id] = lst

    return Index(
        mode="bm25" if mode_flag == 0 else "external",
        postings=postings,
        chunk_ids=chunk_ids,
        token_counts=token_counts,
        avg_len=avg_len,
        terms=terms,
        k1=k1,
        b=b,
        _ref_by_id={cid: ref for ref, cid in enumerate(chunk_ids)},
    )
