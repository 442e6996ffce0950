"""Grounded answer generation with explicit abstention.

The prompt template is canonical and byte-stable: a grounding instruction,
the retrieved context, then the question.  A model that cannot answer from
the context is instructed to output 'NONE'; :func:`is_abstention` recognizes
that marker leniently (case, surrounding whitespace and terminal punctuation
are ignored).

Two generators share the interface: a remote chat-completions client and a
deterministic stub for offline runs.  The stub answers with the first gold
answer whose normalized form occurs in the normalized context, else 'NONE',
which makes full pipeline runs reproducible without any model.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import time
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx

from .errors import DomainError, GenerationError

GEN_ENDPOINT_ENV = "GEN_ENDPOINT"
GEN_API_KEY_ENV = "GEN_API_KEY"
GEN_MODEL_ENV = "GEN_MODEL"

INSTRUCTION = (
    "Answer only using the provided context. "
    "If the context is insufficient, output 'NONE'."
)
ABSTENTION_MARKER = "NONE"

_CONTEXT_HEADER = "\n\nContext:\n"
_QUESTION_HEADER = "\n\nQuestion: "
_ANSWER_FOOTER = "\nAnswer:"


@dataclass(frozen=True)
class GeneratorParams:
    model: str = ""
    endpoint: str = ""
    api_key: str = ""
    temperature: float = 0.1
    max_output_tokens: int = 64
    timeout_ms: int = 30000
    retries: int = 2
    max_concurrency: int = 4

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise DomainError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise DomainError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class Answer:
    text: str
    abstained: bool
    latency_ms: float = 0.0
    raw_model_id: str = ""

    def __post_init__(self) -> None:
        if self.abstained != is_abstention(self.text):
            raise DomainError(
                f"abstained flag inconsistent with text {self.text!r}"
            )


def render_prompt(question: str, context_text: str) -> str:
    """The canonical prompt: instruction, context block, question."""
    if not question:
        raise DomainError("question must be non-empty")
    return f"{INSTRUCTION}{_CONTEXT_HEADER}{context_text}{_QUESTION_HEADER}{question}{_ANSWER_FOOTER}"


def split_prompt(prompt: str) -> tuple[str, str]:
    """(system, user) message pair for chat-style endpoints."""
    if prompt.startswith(INSTRUCTION):
        return INSTRUCTION, prompt[len(INSTRUCTION):].lstrip("\n")
    return INSTRUCTION, prompt


def context_from_prompt(prompt: str) -> str:
    """Recover the context block from a canonical prompt."""
    try:
        after = prompt.split(_CONTEXT_HEADER, 1)[1]
        return after.rsplit(_QUESTION_HEADER, 1)[0]
    except IndexError:
        return ""


def is_abstention(text: str) -> bool:
    """True iff the text is the abstention marker, up to case, whitespace and
    terminal punctuation."""
    s = text.strip()
    while s and unicodedata.category(s[-1]).startswith("P"):
        s = s[:-1].rstrip()
    return s.casefold() == ABSTENTION_MARKER.casefold()


def _answer(text: str, latency_ms: float = 0.0, model_id: str = "") -> Answer:
    trimmed = text.strip()
    return Answer(
        text=trimmed,
        abstained=is_abstention(trimmed),
        latency_ms=latency_ms,
        raw_model_id=model_id,
    )


class StubGenerator:
    """Pure function of (prompt, gold answers): echo a grounded gold answer.

    Outputs the first gold answer whose normalized form is a substring of
    the normalized context, else the abstention marker.
    """

    kind = "stub"

    def generate(self, prompt: str, gold_answers: Sequence[str] = ()) -> Answer:
        from .metrics import normalize_answer

        context = normalize_answer(context_from_prompt(prompt))
        for gold in gold_answers:
            norm = normalize_answer(gold)
            if norm and norm in context:
                return _answer(gold, model_id="stub")
        return _answer(ABSTENTION_MARKER, model_id="stub")


class RemoteGenerator:
    """Chat-completions JSON-over-HTTP client with retry and jittered backoff."""

    kind = "remote"

    def __init__(self, params: GeneratorParams, client: httpx.Client | None = None):
        endpoint = params.endpoint or os.environ.get(GEN_ENDPOINT_ENV, "")
        if not endpoint:
            raise GenerationError(f"no generation endpoint configured ({GEN_ENDPOINT_ENV})")
        self.params = params
        self.endpoint = endpoint
        self.model = params.model or os.environ.get(GEN_MODEL_ENV, "")
        self.api_key = params.api_key or os.environ.get(GEN_API_KEY_ENV, "")
        self._client = client or httpx.Client(timeout=params.timeout_ms / 1000.0)

    def generate(self, prompt: str, gold_answers: Sequence[str] = ()) -> Answer:
        system, user = split_prompt(prompt)
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_output_tokens,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        started = time.monotonic()
        for attempt in range(self.params.retries + 1):
            try:
                response = self._client.post(self.endpoint, json=payload, headers=headers)
                response.raise_for_status()
                body = response.json()
                text = body["choices"][0]["message"]["content"]
                model_id = body.get("model", self.model)
                latency = (time.monotonic() - started) * 1000.0
                return _answer(text, latency_ms=latency, model_id=model_id)
            except Exception as exc:
                last_error = exc
                if attempt < self.params.retries:
                    time.sleep(0.2 * (attempt + 1) + random.uniform(0.0, 0.1))
        raise GenerationError(
            f"generation failed after {self.params.retries + 1} attempts: {last_error}"
        )


def generate(prompt: str, params: GeneratorParams) -> Answer:
    """One-shot remote generation with the given parameters."""
    return RemoteGenerator(params).generate(prompt)


def _prompt_key(prompt: str) -> str:
    return hashlib.blake2b(prompt.encode("utf-8"), digest_size=16).hexdigest()


class RecordingGenerator:
    """Wraps a generator and captures (prompt hash -> answer) to a JSONL file."""

    kind = "recording"

    def __init__(self, inner, path: str | Path):
        self.inner = inner
        self.path = Path(path)

    def generate(self, prompt: str, gold_answers: Sequence[str] = ()) -> Answer:
        answer = self.inner.generate(prompt, gold_answers)
        record = {
            "prompt_key": _prompt_key(prompt),
            "text": answer.text,
            "model": answer.raw_model_id,
        }
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return answer


class ReplayGenerator:
    """Replays answers recorded by :class:`RecordingGenerator`."""

    kind = "replay"

    def __init__(self, path: str | Path):
        self._table: dict[str, dict] = {}
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    record = json.loads(line)
                    self._table[record["prompt_key"]] = record

    def generate(self, prompt: str, gold_answers: Sequence[str] = ()) -> Answer:
        record = self._table.get(_prompt_key(prompt))
        if record is None:
            raise GenerationError("no recorded answer for this prompt")
        return _answer(record["text"], model_id=record.get("model", "replay"))
