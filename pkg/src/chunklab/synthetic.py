"""Deterministic synthetic corpora for offline evaluation.

Two generators:

* :func:`long_token_documents`: documents that are plain runs of single-token
  words, sized exactly in tokens.  Useful for window-arithmetic checks such
  as the overlap inflation law.
* :func:`build_toy_corpus`: a QA corpus with one planted gold sentence per
  question and a controlled number of stronger decoy sentences, so the rank
  of the answer-bearing chunk is predictable.  Questions with decoys are only
  answerable once the context budget is large enough to reach past the
  decoys, which makes abstention fall as the budget grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Document, QAPair

_FILLER_WORDS = (
    "maple", "harbor", "lantern", "meadow", "quartz", "violet", "ember",
    "willow", "falcon", "tundra", "saffron", "cobalt", "juniper", "marble",
    "onyx", "prairie", "sable", "timber", "umber", "zephyr", "basil",
    "cedar", "dahlia", "fjord", "garnet", "heron", "indigo", "jasper",
    "kelp", "lagoon",
)


def long_token_documents(n_docs: int, tokens_per_doc: int, seed: int = 0) -> list[Document]:
    """Documents of exactly ``tokens_per_doc`` single-token words each."""
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_docs):
        words = [f"w{rng.integers(0, 5000)}x" for _ in range(tokens_per_doc)]
        docs.append(Document(id=f"long{d}", title="", text=" ".join(words)))
    return docs


@dataclass(frozen=True)
class ToyCorpusSpec:
    n_questions: int = 20
    n_documents: int = 20
    filler_sentences_per_doc: int = 12
    max_decoys: int = 3  # question i gets i % (max_decoys + 1) decoys
    seed: int = 7

    def __post_init__(self) -> None:
        if self.n_documents < self.n_questions:
            raise ValueError("need at least one document per question")
        if self.n_documents < 2:
            raise ValueError("need at least two documents")


def _filler_sentence(rng: np.random.Generator) -> str:
    a, b, c, d = (str(_FILLER_WORDS[i]) for i in rng.integers(0, len(_FILLER_WORDS), 4))
    return f"The {a} {b} rested near the {c} {d}."


def toy_answer(i: int) -> str:
    return f"keyzq{i}x"


def toy_topic(i: int) -> str:
    return f"topiczq{i}"


def build_toy_corpus(spec: ToyCorpusSpec = ToyCorpusSpec()) -> tuple[list[Document], list[QAPair]]:
    """Return (documents, qa_pairs) with planted answers at controlled ranks.

    Document ``i`` (for i < n_questions) carries the gold sentence for
    question ``i`` in the middle of its filler sentences.  Each decoy for
    question ``i`` lives in a *different* document and repeats the topic term
    four times, so a term-weighted retriever ranks every decoy above the gold
    sentence: the gold chunk lands at rank (decoys + 1).
    """
    rng = np.random.default_rng(spec.seed)
    sentences: list[list[str]] = []
    for d in range(spec.n_documents):
        sentences.append([_filler_sentence(rng) for _ in range(spec.filler_sentences_per_doc)])

    qa_pairs: list[QAPair] = []
    for i in range(spec.n_questions):
        topic = toy_topic(i)
        answer = toy_answer(i)
        gold = f"The {topic} access code is {answer}."
        middle = len(sentences[i]) // 2
        sentences[i].insert(middle, gold)

        decoys = i % (spec.max_decoys + 1)
        for j in range(decoys):
            host = (i + 1 + j) % spec.n_documents
            decoy = f"Zone {topic} {topic} {topic} {topic} access code is under audit."
            sentences[host].insert(len(sentences[host]) // 2, decoy)

        qa_pairs.append(
            QAPair(
                id=f"q{i:03d}",
                question=f"What is the {topic} access code?",
                gold_answers=(answer,),
            )
        )

    documents = [
        Document(id=f"doc{d:03d}", title=f"Toy document {d}", text=" ".join(sentences[d]))
        for d in range(spec.n_documents)
    ]
    return documents, qa_pairs


def expected_gold_rank(i: int, spec: ToyCorpusSpec = ToyCorpusSpec()) -> int:
    """Rank the planted chunk is designed to take for question ``i``."""
    return (i % (spec.max_decoys + 1)) + 1
