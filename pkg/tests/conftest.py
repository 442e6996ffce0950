import json
from pathlib import Path

import pytest

from chunklab.corpus import Document


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name: str, records: list[dict]) -> Path:
        path = tmp_path / name
        with path.open("w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return path

    return _write


def make_doc(doc_id: str, n_tokens: int) -> Document:
    """A document of exactly ``n_tokens`` single-token words."""
    return Document(id=doc_id, title="", text=" ".join(f"tk{i}" for i in range(n_tokens)))


def sentence_of(n_tokens: int, tag: str) -> str:
    """A sentence counting exactly ``n_tokens`` tokens (words + final period)."""
    assert n_tokens >= 2
    words = [f"W{tag}{i}" for i in range(n_tokens - 1)]
    return " ".join(words) + "."
