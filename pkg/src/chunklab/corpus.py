"""Corpus ingestion, tokenization and sentence segmentation.

Every offset produced by this module is a **byte** offset into the UTF-8
encoding of the text, never a codepoint index.  Byte offsets make spans
unambiguous to slice from any language or storage layer; use
:func:`byte_slice` to recover the text of a span.

The default tokenizer is deliberately simple and dependency-free: a maximal
run of alphanumeric codepoints is one token, and every other non-whitespace
codepoint is a token of its own.  It exists for deterministic token-budget
accounting; production setups that must mirror a specific generator
tokenizer can plug any object implementing :class:`Tokenizer`, e.g.
:class:`VocabTokenizer` loaded from a vocabulary file.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, runtime_checkable

from .errors import IngestError

# Maximal alphanumeric run, else a single non-whitespace codepoint.
# [^\W_] is exactly the set of codepoints for which str.isalnum() is true.
_TOKEN_RE = re.compile(r"[^\W_]+|\S")

_TERMINATORS = ".!?"
_OPENING_QUOTES = frozenset("\"'“‘«")

# Two newlines separated only by non-newline whitespace: a hard paragraph
# break that always ends a sentence.
_HARD_BREAK_RE = re.compile(r"\n[^\S\n]*\n")


@dataclass(frozen=True)
class TokenSpan:
    """Half-open [start, end) byte span of one token."""

    start: int
    end: int


@dataclass(frozen=True)
class SentenceSpan:
    """Half-open [start, end) byte span of one sentence plus its token count."""

    start: int
    end: int
    token_count: int


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise IngestError("document id must be non-empty")
        if not self.text.strip():
            raise IngestError(f"document {self.id!r}: text is empty")


@dataclass(frozen=True)
class QAPair:
    id: str
    question: str
    gold_answers: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        if not self.id:
            raise IngestError("qa id must be non-empty")
        if not self.question.strip():
            raise IngestError(f"qa {self.id!r}: question is empty")
        if not self.gold_answers:
            raise IngestError(f"qa {self.id!r}: needs at least one answer")


def _byte_offsets(text: str) -> list[int] | None:
    """Prefix byte lengths per codepoint index, or None when ASCII (identity)."""
    if text.isascii():
        return None
    offs = [0] * (len(text) + 1)
    pos = 0
    for i, ch in enumerate(text):
        offs[i] = pos
        pos += len(ch.encode("utf-8"))
    offs[len(text)] = pos
    return offs


def byte_slice(text: str | bytes, start: int, end: int) -> str:
    """Slice text by byte offsets. Pass pre-encoded bytes to avoid re-encoding."""
    raw = text if isinstance(text, bytes) else text.encode("utf-8")
    return raw[start:end].decode("utf-8")


@runtime_checkable
class Tokenizer(Protocol):
    """Deterministic text -> token spans mapping.

    ``whitespace_additive`` declares that token counts add exactly across
    any whitespace join (count(a + ws + b) == count(a) + count(b)); the
    context assembler uses it as an exact fast path.
    """

    whitespace_additive: bool

    def spans(self, text: str) -> list[TokenSpan]: ...

    def count(self, text: str) -> int: ...


class UnicodeTokenizer:
    """Default tokenizer: alphanumeric runs plus single-codepoint symbols."""

    whitespace_additive = True

    def spans(self, text: str) -> list[TokenSpan]:
        offs = _byte_offsets(text)
        if offs is None:
            return [TokenSpan(m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]
        return [TokenSpan(offs[m.start()], offs[m.end()]) for m in _TOKEN_RE.finditer(text)]

    def count(self, text: str) -> int:
        n = 0
        for _ in _TOKEN_RE.finditer(text):
            n += 1
        return n


class VocabTokenizer:
    """Greedy longest-match tokenizer over a fixed vocabulary.

    Word runs (as defined by the default tokenizer) are segmented into the
    longest vocabulary pieces available; unmatched codepoints fall back to
    single-codepoint tokens.  Non-word codepoints are one token each, as in
    the default tokenizer.  Intended as the production-parity adapter when
    budgets must approximate a generator's subword vocabulary.
    """

    whitespace_additive = True

    def __init__(self, vocab: Iterable[str]):
        self._vocab = frozenset(v for v in vocab if v)
        self._max_len = max((len(v) for v in self._vocab), default=1)

    @classmethod
    def from_file(cls, path: str | Path) -> "VocabTokenizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line.strip() for line in lines if line.strip())

    def _split_run(self, run: str) -> list[tuple[int, int]]:
        pieces: list[tuple[int, int]] = []
        i = 0
        while i < len(run):
            for width in range(min(self._max_len, len(run) - i), 1, -1):
                if run[i : i + width] in self._vocab:
                    pieces.append((i, i + width))
                    i += width
                    break
            else:
                pieces.append((i, i + 1))
                i += 1
        return pieces

    def spans(self, text: str) -> list[TokenSpan]:
        offs = _byte_offsets(text)

        def b(char_index: int) -> int:
            return char_index if offs is None else offs[char_index]

        out: list[TokenSpan] = []
        for m in _TOKEN_RE.finditer(text):
            if m.end() - m.start() == 1:
                out.append(TokenSpan(b(m.start()), b(m.end())))
                continue
            for rel_start, rel_end in self._split_run(m.group()):
                out.append(TokenSpan(b(m.start() + rel_start), b(m.start() + rel_end)))
        return out

    def count(self, text: str) -> int:
        return len(self.spans(text))


DEFAULT_TOKENIZER = UnicodeTokenizer()


def tokenize(text: str, tokenizer: Tokenizer | None = None) -> list[TokenSpan]:
    """Token spans of ``text`` (byte offsets). Empty text tokenizes to []."""
    return (tokenizer or DEFAULT_TOKENIZER).spans(text)


def count_tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    """Number of tokens in ``text``; equals len(tokenize(text))."""
    return (tokenizer or DEFAULT_TOKENIZER).count(text)


def load_abbreviations(path: str | Path | None = None) -> frozenset[str]:
    """Abbreviation set (lowercase, no trailing period) from a plain-text file.

    With no path, the list shipped with the package is used.  Lines starting
    with '#' are comments.
    """
    if path is None:
        data = resources.files("chunklab.data").joinpath("abbreviations.txt").read_text("utf-8")
    else:
        data = Path(path).read_text(encoding="utf-8")
    entries = set()
    for line in data.splitlines():
        line = line.strip().lower().rstrip(".")
        if line and not line.startswith("#"):
            entries.add(line)
    return frozenset(entries)


class SentenceSegmenter:
    """Rule-based sentence splitter.

    A sentence ends after '.', '!' or '?' when the terminator is followed by
    whitespace and the next non-whitespace codepoint is an uppercase letter,
    an opening quote, or a digit.  A period is ignored when the word before
    it is in the abbreviation list.  A blank line (newline-newline) always
    ends a sentence.  Returned spans are trimmed to non-whitespace edges, so
    together they cover exactly the non-whitespace text, in order.
    """

    def __init__(
        self,
        abbreviations: Iterable[str] | None = None,
        tokenizer: Tokenizer | None = None,
    ):
        if abbreviations is None:
            self.abbreviations = load_abbreviations()
        else:
            self.abbreviations = frozenset(a.lower().rstrip(".") for a in abbreviations)
        self.tokenizer = tokenizer or DEFAULT_TOKENIZER

    def _is_abbreviation(self, text: str, dot_index: int) -> bool:
        w = dot_index
        while w > 0 and not text[w - 1].isspace():
            w -= 1
        word = text[w:dot_index]
        while word and not word[0].isalnum():
            word = word[1:]
        return bool(word) and word.lower() in self.abbreviations

    def _split_points(self, text: str) -> list[int]:
        points: set[int] = set()
        for m in _HARD_BREAK_RE.finditer(text):
            points.add(m.start())
        n = len(text)
        for m in re.finditer(r"[.!?]", text):
            i = m.start()
            j = i + 1
            if j >= n or not text[j].isspace():
                continue
            k = j
            while k < n and text[k].isspace():
                k += 1
            if k >= n:
                continue
            nxt = text[k]
            if not (nxt.isupper() or nxt.isdigit() or nxt in _OPENING_QUOTES):
                continue
            if text[i] == "." and self._is_abbreviation(text, i):
                continue
            points.add(i + 1)
        return sorted(points)

    def segment(self, text: str) -> list[SentenceSpan]:
        if not text.strip():
            return []
        offs = _byte_offsets(text)

        def b(char_index: int) -> int:
            return char_index if offs is None else offs[char_index]

        bounds = self._split_points(text) + [len(text)]
        spans: list[SentenceSpan] = []
        prev = 0
        for point in bounds:
            s, e = prev, point
            prev = point
            while s < e and text[s].isspace():
                s += 1
            while e > s and text[e - 1].isspace():
                e -= 1
            if e <= s:
                continue
            spans.append(SentenceSpan(b(s), b(e), self.tokenizer.count(text[s:e])))
        return spans


DEFAULT_SEGMENTER = SentenceSegmenter()


def segment_sentences(text: str, segmenter: SentenceSegmenter | None = None) -> list[SentenceSpan]:
    """Sentence spans of ``text`` under the default rules (byte offsets)."""
    return (segmenter or DEFAULT_SEGMENTER).segment(text)


@dataclass
class CorpusHandle:
    """In-memory view of one ingested JSONL file."""

    kind: str
    path: Path
    documents: dict[str, Document] = field(default_factory=dict)
    qa_pairs: list[QAPair] = field(default_factory=list)
    digest: str = ""

    @property
    def count(self) -> int:
        return len(self.documents) if self.kind == "documents" else len(self.qa_pairs)


def _require_str(record: dict, key: str, where: str) -> str:
    value = record.get(key)
    if not isinstance(value, str):
        raise IngestError(f"{where}: field {key!r} missing or not a string")
    return value


def ingest_corpus(path: str | Path, kind: str) -> CorpusHandle:
    """Load a documents or QA JSONL file.

    Documents lines look like ``{"id", "title", "text"}``; QA lines like
    ``{"id", "question", "answers"}``.  Errors report the offending line
    number; duplicate ids and empty files are rejected.
    """
    if kind not in ("documents", "qa"):
        raise IngestError(f"unknown corpus kind {kind!r}")
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")

    handle = CorpusHandle(kind=kind, path=path)
    hasher = hashlib.sha256()
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}:{line_no}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{where}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise IngestError(f"{where}: expected a JSON object")

            rid = _require_str(record, "id", where)
            if rid in seen:
                raise IngestError(f"{where}: duplicate id {rid!r}")
            seen.add(rid)

            if kind == "documents":
                doc = Document(
                    id=rid,
                    title=record.get("title", "") or "",
                    text=_require_str(record, "text", where),
                )
                handle.documents[rid] = doc
                hasher.update(f"{rid}\x00{doc.text}\x00".encode("utf-8"))
            else:
                answers = record.get("answers")
                if not isinstance(answers, list) or not answers:
                    raise IngestError(f"{where}: field 'answers' must be a non-empty list")
                if not all(isinstance(a, str) for a in answers):
                    raise IngestError(f"{where}: answers must be strings")
                from .metrics import normalize_answer  # local import avoids a cycle

                for answer in answers:
                    if not normalize_answer(answer):
                        raise IngestError(f"{where}: answer {answer!r} is empty once normalized")
                qa = QAPair(id=rid, question=_require_str(record, "question", where),
                            gold_answers=tuple(answers))
                handle.qa_pairs.append(qa)
                hasher.update(
                    "\x00".join([rid, qa.question, *qa.gold_answers]).encode("utf-8") + b"\x00"
                )

    if not seen:
        raise IngestError(f"{path}: file contains no records")
    handle.digest = hasher.hexdigest()
    return handle
