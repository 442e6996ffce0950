"""Fill-to-budget context assembly.

Retrieved chunks are appended in rank order until the token budget is
exhausted; chunks are never truncated.  Two policies handle a chunk that
does not fit: ``stop`` halts at the first one (the selection is a rank
prefix), ``skip`` passes over it and keeps trying later hits (the selection
is a rank subsequence).  The separator between chunks is one blank line and
its cost is tokenizer-exact: the window's total is the token count of the
fully rendered text, never an estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .chunking import Chunk
from .corpus import DEFAULT_TOKENIZER, Tokenizer
from .errors import DomainError, IntegrityError
from .retrieval import RankedList

SEPARATOR = "\n\n"

STOP = "stop"
SKIP = "skip"


@dataclass(frozen=True)
class ContextWindow:
    """Rank-ordered chunk selection under a token budget."""

    chunk_ids: tuple[str, ...]
    total_tokens: int
    budget_c: int
    rendered_text: str
    skipped_count: int = 0

    def __post_init__(self) -> None:
        if self.total_tokens > self.budget_c:
            raise IntegrityError(
                f"window over budget: {self.total_tokens} > {self.budget_c}"
            )


def render(window: ContextWindow) -> str:
    """Canonical text of a window: chunks joined by one blank line."""
    return window.rendered_text


def assemble_context(
    ranked: RankedList,
    chunks: Mapping[str, Chunk],
    budget_c: int,
    policy: str = STOP,
    tokenizer: Tokenizer | None = None,
) -> ContextWindow:
    """Select chunks from ``ranked`` in order until ``budget_c`` is reached.

    Every hit must resolve through ``chunks``; an unknown id raises
    :class:`IntegrityError`.  For tokenizers whose counts add across
    whitespace joins the totals are computed additively; otherwise each
    candidate window is re-tokenized in full, which is exact for any
    tokenizer.
    """
    if budget_c < 1:
        raise DomainError(f"budget_c must be >= 1, got {budget_c}")
    if policy not in (STOP, SKIP):
        raise DomainError(f"unknown fill policy {policy!r}")
    tok = tokenizer or DEFAULT_TOKENIZER
    additive = getattr(tok, "whitespace_additive", False)

    selected_ids: list[str] = []
    selected_texts: list[str] = []
    total = 0
    skipped = 0

    for chunk_id, _score in ranked.hits:
        chunk = chunks.get(chunk_id)
        if chunk is None:
            raise IntegrityError(f"ranked hit {chunk_id!r} does not resolve to a chunk")
        if additive:
            candidate_total = total + chunk.token_count
        else:
            candidate_total = tok.count(SEPARATOR.join(selected_texts + [chunk.text]))
        if candidate_total <= budget_c:
            selected_ids.append(chunk_id)
            selected_texts.append(chunk.text)
            total = candidate_total
        elif policy == STOP:
            break
        else:
            skipped += 1

    return ContextWindow(
        chunk_ids=tuple(selected_ids),
        total_tokens=total,
        budget_c=budget_c,
        rendered_text=SEPARATOR.join(selected_texts),
        skipped_count=skipped,
    )
