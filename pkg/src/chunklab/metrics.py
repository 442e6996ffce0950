"""Answer scoring and uncertainty quantification.

Three quality signals are computed per question: exact match after standard
answer normalization, a greedy token-matching similarity score against the
reference answer, and the abstention ("NONE") ratio.  Aggregates carry 95%
bootstrap percentile confidence intervals; paired comparisons resample the
per-question deltas jointly so that differences between two configurations
can be read directly against their interval.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Tokenizer, byte_slice, tokenize
from .errors import DomainError, UndefinedMetricError

_ARTICLES = frozenset({"a", "an", "the"})

# Two runs whose per-question deltas stay inside these bands are reported as
# having no measurable difference.
NO_DIFFERENCE_BAND = {"bert_f1": 0.004, "em": 0.001}


def normalize_answer(text: str) -> str:
    """Casefold, replace punctuation with spaces, drop articles, squeeze spaces."""
    chars = []
    for ch in text.casefold():
        if unicodedata.category(ch).startswith("P"):
            chars.append(" ")
        else:
            chars.append(ch)
    words = [w for w in "".join(chars).split() if w not in _ARTICLES]
    return " ".join(words)


def exact_match(predicted: str, gold_answers: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold answer."""
    if not gold_answers:
        raise DomainError("exact_match requires at least one gold answer")
    norm = normalize_answer(predicted)
    return int(any(norm == normalize_answer(g) for g in gold_answers))


@dataclass(frozen=True)
class BertScore:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # a side had no tokens; scores forced to 0


def bertscore(predicted: str, reference: str, embedder, tokenizer: Tokenizer | None = None) -> BertScore:
    """Greedy maximum-cosine token matching between two strings.

    Both sides are tokenized, each token string is embedded independently via
    ``embedder``, and cosine similarities are clamped to [0, 1].  Precision is
    the mean over predicted tokens of the best similarity to any reference
    token; recall is symmetric; f1 is their harmonic mean.  No importance
    weighting or baseline rescaling is applied.
    """
    pred_tokens = [byte_slice(predicted, s.start, s.end) for s in tokenize(predicted, tokenizer)]
    ref_tokens = [byte_slice(reference, s.start, s.end) for s in tokenize(reference, tokenizer)]
    if not pred_tokens or not ref_tokens:
        return BertScore(0.0, 0.0, 0.0, degenerate=True)

    vectors = embedder.embed(pred_tokens + ref_tokens)
    mat = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    norms[norms == 0.0] = 1.0  # zero vectors match nothing
    mat = mat / norms[:, None]
    sim = mat[: len(pred_tokens)] @ mat[len(pred_tokens):].T
    sim = np.clip(sim, 0.0, 1.0)

    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    f1 = 0.0 if precision + recall == 0.0 else 2.0 * precision * recall / (precision + recall)
    return BertScore(precision, recall, f1)


@dataclass(frozen=True)
class QAOutcome:
    """Scored result of one question under one configuration."""

    question_id: str
    predicted: str
    abstained: bool
    gold_answers: tuple[str, ...]
    em: int | None
    bert_f1: float | None
    status: str = "ok"  # ok | error

    def __post_init__(self) -> None:
        if self.status not in ("ok", "error"):
            raise DomainError(f"bad outcome status {self.status!r}")
        if self.status == "ok" and self.em is None:
            raise DomainError("ok outcomes must carry an em score")
        if self.status == "ok" and self.abstained and self.em != 0:
            raise DomainError("abstained outcomes score em=0 against non-empty gold")


def none_ratio(outcomes: Sequence[QAOutcome]) -> float:
    """Fraction of ok-status outcomes that abstained."""
    ok = [o for o in outcomes if o.status == "ok"]
    if not ok:
        raise UndefinedMetricError("none_ratio needs at least one ok outcome")
    return sum(1 for o in ok if o.abstained) / len(ok)


@dataclass(frozen=True)
class MetricSummary:
    """Sample mean with a bootstrap percentile confidence interval."""

    name: str
    mean: float
    ci_low: float
    ci_high: float
    n: int
    bootstrap_B: int
    seed: int
    level: float = 0.95

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError("summary needs n >= 1")
        if not (self.ci_low - 1e-12 <= self.mean <= self.ci_high + 1e-12):
            raise DomainError(
                f"inconsistent summary for {self.name}: "
                f"mean {self.mean} outside [{self.ci_low}, {self.ci_high}]"
            )

    @property
    def zero_in_interval(self) -> bool:
        return self.ci_low <= 0.0 <= self.ci_high


def _quantile_sorted(sorted_values: np.ndarray, q: float) -> float:
    # Linear interpolation between order statistics.
    h = q * (len(sorted_values) - 1)
    lo = math.floor(h)
    hi = math.ceil(h)
    if lo == hi:
        return float(sorted_values[lo])
    return float(sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo]))


def _resample_means(values: np.ndarray, B: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(B, len(values)))
    return values[idx].mean(axis=1)


def bootstrap_ci(
    values: Sequence[float],
    B: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    name: str = "metric",
) -> MetricSummary:
    """Percentile bootstrap interval for the mean of ``values``.

    ``B`` resamples of size n are drawn with replacement from a generator
    seeded with ``seed``, so the result is fully determined by
    (values, B, level, seed).
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("bootstrap_ci needs a non-empty 1-d value list")
    if B < 100:
        raise DomainError("bootstrap_ci needs B >= 100")
    if not (0.0 < level < 1.0):
        raise DomainError("bootstrap_ci needs 0 < level < 1")

    means = np.sort(_resample_means(arr, B, seed))
    alpha = (1.0 - level) / 2.0
    return MetricSummary(
        name=name,
        mean=float(arr.mean()),
        ci_low=_quantile_sorted(means, alpha),
        ci_high=_quantile_sorted(means, 1.0 - alpha),
        n=int(arr.size),
        bootstrap_B=B,
        seed=seed,
        level=level,
    )


def paired_delta_ci(
    values_a: Sequence[float],
    values_b: Sequence[float],
    B: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    name: str = "paired_delta",
) -> MetricSummary:
    """Bootstrap interval for mean(a_i - b_i) with jointly resampled pairs.

    Inputs must be aligned by question; whether zero falls inside the
    interval is exposed as ``MetricSummary.zero_in_interval``.
    """
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"paired inputs differ in length: {a.shape} vs {b.shape}")
    return bootstrap_ci(a - b, B=B, level=level, seed=seed, name=name)


def no_measurable_difference(delta: MetricSummary, metric: str) -> bool:
    """Report annotation: delta interval inside the shipped tolerance band."""
    band = NO_DIFFERENCE_BAND.get(metric)
    if band is None:
        return False
    return delta.zero_in_interval and max(abs(delta.ci_low), abs(delta.ci_high)) <= band
