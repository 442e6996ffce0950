import re
import unicodedata

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunklab.embedding import DeterministicEmbeddingProvider
from chunklab.errors import DomainError, UndefinedMetricError
from chunklab.metrics import (
    MetricSummary,
    QAOutcome,
    bertscore,
    bootstrap_ci,
    exact_match,
    no_measurable_difference,
    none_ratio,
    normalize_answer,
    paired_delta_ci,
)


def reference_normalize(text: str) -> str:
    """Independent normalizer: regex pipeline instead of a char loop."""
    lowered = text.casefold()
    no_punct = "".join(
        " " if unicodedata.category(c).startswith("P") else c for c in lowered
    )
    collapsed = re.sub(r"\s+", " ", no_punct).strip()
    return " ".join(w for w in collapsed.split(" ") if w not in {"a", "an", "the"})


class TestNormalizeAnswer:
    @pytest.mark.parametrize("raw,expected", [
        ("The Eiffel Tower!", "eiffel tower"),
        ("A  dog.", "dog"),
        ("an answer, the end", "answer end"),
        ("  Straße  ", "strasse"),  # casefold, not lower
        ("", ""),
    ])
    def test_forced_examples(self, raw, expected):
        assert normalize_answer(raw) == expected

    @given(st.text(max_size=80))
    @settings(max_examples=300, deadline=None)
    def test_idempotent(self, text):
        once = normalize_answer(text)
        assert normalize_answer(once) == once

    @given(st.text(max_size=80))
    @settings(max_examples=200, deadline=None)
    def test_matches_reference(self, text):
        assert normalize_answer(text) == reference_normalize(text)


PUNCT = list(".,!?;:'\"()-")


def perturb(gold: str, rng: np.random.Generator) -> str:
    """Random casing, punctuation and article insertion that must keep EM=1."""
    words = gold.split()
    out = []
    if rng.random() < 0.3:
        out.append(rng.choice(["The", "a", "an"]))
    for word in words:
        mode = rng.integers(0, 3)
        if mode == 0:
            word = word.upper()
        elif mode == 1:
            word = word.capitalize()
        if rng.random() < 0.5:
            word = word + rng.choice(PUNCT)
        if rng.random() < 0.2:
            word = rng.choice(PUNCT) + word
        out.append(word)
        if rng.random() < 0.2:
            out.append(rng.choice(["the", "a", "an"]))
    return " ".join(out)


class TestExactMatch:
    def test_simple_hit(self):
        assert exact_match("Paris", ["paris"]) == 1

    def test_substring_is_not_enough(self):
        assert exact_match("in Paris", ["paris"]) == 0

    def test_multiple_golds(self):
        assert exact_match("NYC", ["New York", "nyc"]) == 1

    def test_empty_golds_rejected(self):
        with pytest.raises(DomainError):
            exact_match("x", [])

    def test_perturbation_oracle(self):
        rng = np.random.default_rng(2024)
        golds = ["eiffel tower", "barack obama", "42 degrees", "new york city"]
        for _ in range(200):
            gold = str(rng.choice(golds))
            variant = perturb(gold, rng)
            assert normalize_answer(variant) == reference_normalize(variant)
            assert exact_match(variant, [gold]) == 1, variant

    def test_non_equivalent_strings_fail(self):
        rng = np.random.default_rng(7)
        gold = "eiffel tower"
        for i in range(200):
            wrong = f"{gold} extra{i}" if i % 2 else f"other{i}"
            assert exact_match(wrong, [gold]) == 0


class MappedEmbedder:
    kind = "mapped"
    batch_size = 16

    def __init__(self, table):
        self.table = table
        self.dim = len(next(iter(table.values())))

    def embed(self, texts):
        return [np.asarray(self.table[t], dtype=float) for t in texts]


class TestBertscore:
    def test_identity_is_one(self):
        provider = DeterministicEmbeddingProvider(dim=32)
        score = bertscore("the tall tower", "the tall tower", provider)
        assert score.f1 == pytest.approx(1.0, abs=1e-9)
        assert score.precision == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_tokens_zero(self):
        table = {"aa": (1, 0, 0, 0), "bb": (0, 1, 0, 0), "cc": (0, 0, 1, 0), "dd": (0, 0, 0, 1)}
        score = bertscore("aa bb", "cc dd", MappedEmbedder(table))
        assert score.f1 == 0.0

    def test_hand_built_2x2(self):
        # cos(p1,r1)=0.9 cos(p1,r2)=0.1 cos(p2,r1)=0.1 cos(p2,r2)=0.8
        table = {
            "r1": (1.0, 0.0, 0.0, 0.0),
            "r2": (0.0, 1.0, 0.0, 0.0),
            "p1": (0.9, 0.1, np.sqrt(1 - 0.81 - 0.01), 0.0),
            "p2": (0.1, 0.8, 0.0, np.sqrt(1 - 0.01 - 0.64)),
        }
        score = bertscore("p1 p2", "r1 r2", MappedEmbedder(table))
        assert score.precision == pytest.approx(0.85, abs=1e-6)
        assert score.recall == pytest.approx(0.85, abs=1e-6)
        assert score.f1 == pytest.approx(0.85, abs=1e-6)

    def test_negative_similarities_floored(self):
        table = {"aa": (1.0, 0.0), "bb": (-1.0, 0.0)}
        score = bertscore("aa", "bb", MappedEmbedder(table))
        assert score.f1 == 0.0

    def test_empty_side_degenerate(self):
        provider = DeterministicEmbeddingProvider(dim=8)
        score = bertscore("", "reference", provider)
        assert (score.precision, score.recall, score.f1) == (0.0, 0.0, 0.0)
        assert score.degenerate

    def test_scores_within_unit_interval(self):
        provider = DeterministicEmbeddingProvider(dim=16)
        score = bertscore("alpha beta gamma", "delta beta", provider)
        for value in (score.precision, score.recall, score.f1):
            assert 0.0 <= value <= 1.0


def outcome(qid, abstained=False, status="ok", em=0):
    return QAOutcome(
        question_id=qid, predicted="x", abstained=abstained,
        gold_answers=("g",), em=None if status == "error" else em,
        bert_f1=None if status == "error" else 0.0, status=status,
    )


class TestNoneRatio:
    def test_three_in_ten(self):
        outs = [outcome(f"q{i}", abstained=i < 3) for i in range(10)]
        assert none_ratio(outs) == pytest.approx(0.3)

    def test_none_abstained(self):
        assert none_ratio([outcome("a"), outcome("b")]) == 0.0

    def test_all_abstained(self):
        assert none_ratio([outcome("a", True), outcome("b", True)]) == 1.0

    def test_errors_excluded_from_denominator(self):
        outs = [outcome("a", True), outcome("b", status="error")]
        assert none_ratio(outs) == 1.0

    def test_zero_ok_undefined(self):
        with pytest.raises(UndefinedMetricError):
            none_ratio([outcome("a", status="error")])


class TestBootstrap:
    def test_constant_values_degenerate_interval(self):
        summary = bootstrap_ci([0.5] * 20, B=500, seed=1)
        assert summary.ci_low == summary.ci_high == summary.mean == 0.5

    def test_seeded_determinism(self):
        values = list(np.random.default_rng(0).random(50))
        a = bootstrap_ci(values, B=1000, seed=42)
        b = bootstrap_ci(values, B=1000, seed=42)
        assert (a.ci_low, a.ci_high, a.mean) == (b.ci_low, b.ci_high, b.mean)

    def test_different_seed_different_interval(self):
        values = list(np.random.default_rng(0).random(50))
        a = bootstrap_ci(values, B=1000, seed=1)
        b = bootstrap_ci(values, B=1000, seed=2)
        assert (a.ci_low, a.ci_high) != (b.ci_low, b.ci_high)

    def test_oracle_shared_stream(self):
        # independent resampler: same seeded index stream, numpy quantiles
        values = np.random.default_rng(5).random(80)
        B, seed, level = 400, 99, 0.9
        got = bootstrap_ci(values, B=B, level=level, seed=seed)

        rng = np.random.default_rng(seed)
        idx = rng.integers(0, len(values), size=(B, len(values)))
        means = values[idx].mean(axis=1)
        lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
        assert got.ci_low == pytest.approx(float(lo), abs=1e-12)
        assert got.ci_high == pytest.approx(float(hi), abs=1e-12)

    def test_interval_brackets_mean(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            values = rng.random(int(rng.integers(5, 60)))
            summary = bootstrap_ci(values, B=300, seed=int(rng.integers(0, 1000)))
            assert summary.ci_low <= summary.mean <= summary.ci_high

    def test_preconditions(self):
        with pytest.raises(DomainError):
            bootstrap_ci([], B=100)
        with pytest.raises(DomainError):
            bootstrap_ci([1.0], B=50)
        with pytest.raises(DomainError):
            bootstrap_ci([1.0], level=1.0)


class TestPairedDelta:
    def test_identical_inputs_zero_interval(self):
        a = [0.2, 0.5, 0.9, 0.1]
        summary = paired_delta_ci(a, a, B=300, seed=3)
        assert summary.mean == 0.0
        assert summary.ci_low == summary.ci_high == 0.0
        assert summary.zero_in_interval

    def test_constant_shift(self):
        a = np.array([0.1, 0.4, 0.6, 0.8])
        b = a + 0.1
        summary = paired_delta_ci(a, b, B=300, seed=3)
        assert summary.mean == pytest.approx(-0.1)
        assert summary.ci_low == pytest.approx(-0.1)
        assert summary.ci_high == pytest.approx(-0.1)
        assert not summary.zero_in_interval

    def test_oracle_shared_stream(self):
        rng = np.random.default_rng(8)
        a = rng.random(60)
        b = rng.random(60)
        B, seed = 500, 77
        got = paired_delta_ci(a, b, B=B, seed=seed)

        deltas = a - b
        rng2 = np.random.default_rng(seed)
        idx = rng2.integers(0, len(deltas), size=(B, len(deltas)))
        means = deltas[idx].mean(axis=1)
        lo, hi = np.quantile(means, [0.025, 0.975])
        assert got.ci_low == pytest.approx(float(lo), abs=1e-12)
        assert got.ci_high == pytest.approx(float(hi), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            paired_delta_ci([1.0, 2.0], [1.0])


class TestSummaryAndBands:
    def test_summary_invariant_guard(self):
        with pytest.raises(DomainError):
            MetricSummary(name="m", mean=0.9, ci_low=0.1, ci_high=0.5,
                          n=10, bootstrap_B=100, seed=0)

    def test_no_measurable_difference_bands(self):
        tight = MetricSummary(name="d", mean=0.0, ci_low=-0.003, ci_high=0.003,
                              n=10, bootstrap_B=100, seed=0)
        assert no_measurable_difference(tight, "bert_f1")
        assert not no_measurable_difference(tight, "em")  # band is 0.001
        wide = MetricSummary(name="d", mean=0.0, ci_low=-0.2, ci_high=0.2,
                             n=10, bootstrap_B=100, seed=0)
        assert not no_measurable_difference(wide, "bert_f1")

    def test_outcome_validation(self):
        with pytest.raises(DomainError):
            QAOutcome(question_id="q", predicted="x", abstained=False,
                      gold_answers=("g",), em=None, bert_f1=None, status="ok")
