import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunklab.corpus import (
    Document,
    QAPair,
    SentenceSegmenter,
    VocabTokenizer,
    byte_slice,
    count_tokens,
    ingest_corpus,
    load_abbreviations,
    segment_sentences,
    tokenize,
)
from chunklab.errors import IngestError


def reference_token_texts(text: str) -> list[str]:
    """Independent re-implementation of the tokenization rules: a manual
    character scan instead of a regex."""
    tokens: list[str] = []
    run = ""
    for ch in text:
        if ch.isalnum():
            run += ch
            continue
        if run:
            tokens.append(run)
            run = ""
        if not ch.isspace():
            tokens.append(ch)
    if run:
        tokens.append(run)
    return tokens


def token_texts(text: str) -> list[str]:
    return [byte_slice(text, s.start, s.end) for s in tokenize(text)]


class TestTokenize:
    def test_empty(self):
        assert tokenize("") == []
        assert count_tokens("") == 0

    def test_whitespace_split(self):
        assert token_texts("ab cd") == ["ab", "cd"]
        assert count_tokens("a b c") == 3

    def test_punctuation_rule(self):
        assert token_texts("don't stop.") == ["don", "'", "t", "stop", "."]

    def test_underscore_is_not_a_word_char(self):
        assert token_texts("a_b") == ["a", "_", "b"]

    def test_byte_offsets_non_ascii(self):
        text = "héllo wörld ✓"
        spans = tokenize(text)
        raw = text.encode("utf-8")
        assert [raw[s.start:s.end].decode("utf-8") for s in spans] == ["héllo", "wörld", "✓"]
        assert spans[-1].end <= len(raw)

    def test_fuzz_against_reference(self):
        rng = np.random.default_rng(1234)
        alphabet = list("abcXYZ019 .,!?'\"-\n\t_éλ中✓²") + ["  ", "\n\n"]
        for _ in range(100):
            n = int(rng.integers(0, 60))
            text = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), n))
            assert token_texts(text) == reference_token_texts(text), repr(text)

    def test_count_equals_len_tokenize_random(self):
        rng = np.random.default_rng(99)
        alphabet = list("ab c.!?é\n")
        for _ in range(1000):
            n = int(rng.integers(0, 40))
            text = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), n))
            assert count_tokens(text) == len(tokenize(text))

    @given(st.text(max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_reconstruction_property(self, text):
        # Concatenated token texts reproduce the non-whitespace content.
        assert "".join(token_texts(text)) == "".join(text.split())

    @given(st.text(max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_pure_function(self, text):
        first = tokenize(text)
        second = tokenize(text)
        assert first == second
        assert count_tokens(text) == len(first)


class TestVocabTokenizer:
    def test_greedy_longest_match(self):
        tok = VocabTokenizer(["play", "ing", "walk", "ed"])
        text = "playing walked"
        texts = [byte_slice(text, s.start, s.end) for s in tok.spans(text)]
        assert texts == ["play", "ing", "walk", "ed"]

    def test_fallback_single_codepoints(self):
        tok = VocabTokenizer(["ab"])
        text = "abc!"
        texts = [byte_slice(text, s.start, s.end) for s in tok.spans(text)]
        assert texts == ["ab", "c", "!"]

    def test_from_file(self, tmp_path):
        vocab = tmp_path / "vocab.txt"
        vocab.write_text("foo\nbar\n", encoding="utf-8")
        tok = VocabTokenizer.from_file(vocab)
        assert tok.count("foobar") == 2

    def test_spans_strictly_increasing(self):
        tok = VocabTokenizer(["aa", "b"])
        spans = tok.spans("aaab baa")
        for prev, cur in zip(spans, spans[1:]):
            assert prev.end <= cur.start


# Hand-annotated segmentation corpus: each entry is (text, expected sentences).
SENTENCE_CORPUS = [
    ("A cat. A dog.", ["A cat.", "A dog."]),
    ("Dr. Smith arrived. He sat.", ["Dr. Smith arrived.", "He sat."]),
    ("He left early! Then we ate.", ["He left early!", "Then we ate."]),
    ("Did he go? Yes, he did.", ["Did he go?", "Yes, he did."]),
    ("Mr. Jones met Mrs. Lee. They spoke.", ["Mr. Jones met Mrs. Lee.", "They spoke."]),
    ("It costs 5 dollars. 10 more arrive Monday.",
     ["It costs 5 dollars.", "10 more arrive Monday."]),
    ('She said "stop." "Why?" he asked.', ['She said "stop." "Why?" he asked.']),
    ("Wait... what happened?", ["Wait... what happened?"]),
    ("Prof. Green teaches math. Dr. White teaches physics.",
     ["Prof. Green teaches math.", "Dr. White teaches physics."]),
    ("The vote passed 5 to 4. The court adjourned.",
     ["The vote passed 5 to 4.", "The court adjourned."]),
    ("E.g. the first case. Cf. the appendix.",
     ["E.g. the first case.", "Cf. the appendix."]),
    ("Lines can break\nwithout ending. A blank line does.\n\nNew paragraph starts.",
     ["Lines can break\nwithout ending.", "A blank line does.", "New paragraph starts."]),
    ("No terminator at all", ["No terminator at all"]),
    ("St. Mary Hospital opened in 1920. It still operates.",
     ["St. Mary Hospital opened in 1920.", "It still operates."]),
    ("The file is in vol. 3 of the series. Check p. 12 for details.",
     ["The file is in vol. 3 of the series.", "Check p. 12 for details."]),
    ("Run fast! Jump high! Rest now.", ["Run fast!", "Jump high!", "Rest now."]),
    ('"Begin now." The clerk nodded.', ['"Begin now." The clerk nodded.']),
    ("The U.S. Senate convened. The U.K. Parliament recessed.",
     ["The U.S. Senate convened.", "The U.K. Parliament recessed."]),
    ("One sentence here. 2 begins with a digit. three stays attached.",
     ["One sentence here.", "2 begins with a digit. three stays attached."]),
    ("Hello world. Номер один. Ещё раз.", ["Hello world.", "Номер один.", "Ещё раз."]),
    ("Tables 1-3 follow. See Fig. 4 for layout.",
     ["Tables 1-3 follow.", "See Fig. 4 for layout."]),
    ("They won 3 to 1. Everyone cheered wildly. Then they left.",
     ["They won 3 to 1.", "Everyone cheered wildly.", "Then they left."]),
    ("An ellipsis... Then silence.", ["An ellipsis...", "Then silence."]),
    ("The meeting starts at 9 a.m. sharp. Arrive early.",
     ["The meeting starts at 9 a.m. sharp.", "Arrive early."]),
    ("Snow fell all night. Roads closed by dawn.",
     ["Snow fell all night.", "Roads closed by dawn."]),
]


class TestSegmentSentences:
    def test_trivial_two_sentences(self):
        assert len(segment_sentences("A cat. A dog.")) == 2

    def test_no_terminator(self):
        spans = segment_sentences("no terminator here")
        assert len(spans) == 1
        assert byte_slice("no terminator here", spans[0].start, spans[0].end) == "no terminator here"

    def test_empty_and_whitespace(self):
        assert segment_sentences("") == []
        assert segment_sentences("  \n \t ") == []

    def test_hand_annotated_corpus(self):
        total = 0
        for text, expected in SENTENCE_CORPUS:
            raw = text.encode("utf-8")
            spans = segment_sentences(text)
            got = [raw[s.start:s.end].decode("utf-8") for s in spans]
            assert got == expected, f"segmentation mismatch for {text!r}"
            total += len(expected)
        assert total >= 50  # the mini-corpus stays a meaningful oracle

    def test_token_counts_match_tokenizer(self):
        for text, _ in SENTENCE_CORPUS:
            raw = text.encode("utf-8")
            for span in segment_sentences(text):
                piece = raw[span.start:span.end].decode("utf-8")
                assert span.token_count == count_tokens(piece)

    def test_round_trip_token_totals(self):
        for text, _ in SENTENCE_CORPUS:
            spans = segment_sentences(text)
            assert sum(s.token_count for s in spans) == count_tokens(text)

    def test_tokens_never_straddle_sentence_bounds(self):
        for text, _ in SENTENCE_CORPUS:
            sentences = segment_sentences(text)
            for tok in tokenize(text):
                inside = [
                    s for s in sentences if s.start <= tok.start and tok.end <= s.end
                ]
                assert len(inside) == 1

    def test_custom_abbreviations(self):
        seg = SentenceSegmenter(abbreviations=["zzz"])
        text = "See zzz. Next one."
        assert len(seg.segment(text)) == 1
        default = SentenceSegmenter(abbreviations=[])
        assert len(default.segment(text)) == 2

    def test_shipped_abbreviation_list_loads(self):
        abbrevs = load_abbreviations()
        assert {"dr", "e.g", "vol", "u.s"} <= abbrevs
        assert len(abbrevs) >= 55

    def test_abbreviation_file_override(self, tmp_path):
        path = tmp_path / "abbr.txt"
        path.write_text("# comment\nfoo.\nBAR\n", encoding="utf-8")
        assert load_abbreviations(path) == frozenset({"foo", "bar"})


class TestDomainTypes:
    def test_document_rejects_blank_text(self):
        with pytest.raises(IngestError):
            Document(id="d", title="", text="   ")

    def test_qa_requires_answers(self):
        with pytest.raises(IngestError):
            QAPair(id="q", question="why?", gold_answers=())


class TestIngest:
    def test_documents_count(self, write_jsonl):
        path = write_jsonl("docs.jsonl", [
            {"id": "d1", "title": "t", "text": "one two"},
            {"id": "d2", "title": "", "text": "three"},
            {"id": "d3", "title": "x", "text": "four"},
        ])
        handle = ingest_corpus(path, "documents")
        assert handle.count == 3
        assert handle.documents["d2"].text == "three"
        assert handle.digest

    def test_duplicate_id_rejected(self, write_jsonl):
        path = write_jsonl("docs.jsonl", [
            {"id": "d1", "title": "", "text": "a"},
            {"id": "d1", "title": "", "text": "b"},
        ])
        with pytest.raises(IngestError, match="d1"):
            ingest_corpus(path, "documents")

    def test_qa_missing_answers_reports_line(self, write_jsonl):
        path = write_jsonl("qa.jsonl", [
            {"id": "q1", "question": "who?", "answers": ["x"]},
            {"id": "q2", "question": "what?"},
        ])
        with pytest.raises(IngestError, match=":2"):
            ingest_corpus(path, "qa")

    def test_malformed_line_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "d1", "title": "", "text": "ok"}\n{oops\n', encoding="utf-8")
        with pytest.raises(IngestError, match=":2"):
            ingest_corpus(path, "documents")

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(IngestError, match="no records"):
            ingest_corpus(path, "documents")

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError, match="no such file"):
            ingest_corpus(tmp_path / "nope.jsonl", "documents")

    def test_answer_empty_after_normalization_rejected(self, write_jsonl):
        path = write_jsonl("qa.jsonl", [
            {"id": "q1", "question": "who?", "answers": ["the ..."]},
        ])
        with pytest.raises(IngestError, match="normalized"):
            ingest_corpus(path, "qa")

    def test_qa_roundtrip(self, write_jsonl):
        path = write_jsonl("qa.jsonl", [
            {"id": "q1", "question": "capital of France?", "answers": ["Paris", "paris"]},
        ])
        handle = ingest_corpus(path, "qa")
        assert handle.count == 1
        assert handle.qa_pairs[0].gold_answers == ("Paris", "paris")
