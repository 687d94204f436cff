"""Converting explanation scores to annotation tags and scoring their
agreement with human annotations.

Undefined statistics (degenerate inputs where chance correction has no
meaning) are returned as None so aggregation can skip them instead of
polluting medians with sentinel numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import kendalltau

from .corpus import SpanTag


class TokenTag(IntEnum):
    """Ordinal token tags, from contradicting the label to revealing it."""

    Opposite = 0
    NoIndication = 1
    Strong = 2
    Giveaway = 3


SPAN_TO_TOKEN_TAG = {
    SpanTag.Giveaway: TokenTag.Giveaway,
    SpanTag.Strong: TokenTag.Strong,
    SpanTag.Opposite: TokenTag.Opposite,
}

GIVEAWAY_ABOVE = 0.8
STRONG_ABOVE = 0.2
OPPOSITE_BELOW = -0.3


def scores_to_tags(scores: Sequence[float]) -> list[TokenTag]:
    """Normalize by the document's max |score| and apply the cutoffs:
    > 0.8 giveaway, > 0.2 strong, < -0.3 opposite, otherwise no indication.
    A document of all-zero scores maps entirely to NoIndication."""
    arr = np.asarray(scores, dtype=np.float64)
    peak = float(np.max(np.abs(arr))) if arr.size else 0.0
    if peak == 0.0:
        return [TokenTag.NoIndication] * arr.size
    tags = []
    for s in arr / peak:
        if s > GIVEAWAY_ABOVE:
            tags.append(TokenTag.Giveaway)
        elif s > STRONG_ABOVE:
            tags.append(TokenTag.Strong)
        elif s < OPPOSITE_BELOW:
            tags.append(TokenTag.Opposite)
        else:
            tags.append(TokenTag.NoIndication)
    return tags


def collapse_tags(tags: Iterable[TokenTag], n_tags: int) -> list[int]:
    """Project the 4 ordinal tags onto a 4-, 3- or 2-level scheme.

    3 levels merge giveaway into strong (indication for the correct class);
    2 levels additionally merge opposite into no indication.
    """
    if n_tags not in (2, 3, 4):
        raise ValueError("n_tags must be 2, 3 or 4")
    out = []
    for tag in tags:
        value = int(tag)
        if n_tags <= 3 and tag is TokenTag.Giveaway:
            value = int(TokenTag.Strong)
        if n_tags == 2 and tag is TokenTag.Opposite:
            value = int(TokenTag.NoIndication)
        out.append(value)
    return out


def _check_paired(a: Sequence, b: Sequence, min_len: int = 1) -> None:
    if len(a) != len(b):
        raise ValueError("sequences must have equal length")
    if len(a) < min_len:
        raise ValueError(f"need at least {min_len} items")


def cohen_kappa(a: Sequence, b: Sequence) -> Optional[float]:
    """Unweighted Cohen's Kappa over whatever categories are present.

    Returns 1.0 for two identical constant sequences (full agreement with
    no room for chance) and None when expected agreement is 1 without
    observed identity.
    """
    _check_paired(a, b)
    n = len(a)
    categories = sorted(set(a) | set(b))
    index = {c: i for i, c in enumerate(categories)}
    table = np.zeros((len(categories), len(categories)))
    for x, y in zip(a, b):
        table[index[x], index[y]] += 1
    p_observed = float(np.trace(table)) / n
    marg_a = table.sum(axis=1) / n
    marg_b = table.sum(axis=0) / n
    p_expected = float(marg_a @ marg_b)
    if p_expected >= 1.0 - 1e-15:
        return 1.0 if list(a) == list(b) else None
    return (p_observed - p_expected) / (1.0 - p_expected)


def krippendorff_alpha_ordinal(a: Sequence[int], b: Sequence[int]) -> Optional[float]:
    """Two-rater Krippendorff's Alpha with the ordinal difference metric.

    The squared distance between two categories is the usual cumulative
    marginal-frequency form.  Returns None when every value is identical
    (expected disagreement zero).
    """
    _check_paired(a, b)
    values = sorted(set(a) | set(b))
    if len(values) < 2:
        return None
    index = {v: i for i, v in enumerate(values)}
    k = len(values)
    coincidence = np.zeros((k, k))
    for x, y in zip(a, b):
        coincidence[index[x], index[y]] += 1
        coincidence[index[y], index[x]] += 1
    marginals = coincidence.sum(axis=1)
    n_total = marginals.sum()

    delta2 = np.zeros((k, k))
    for c in range(k):
        for d in range(c + 1, k):
            between = marginals[c : d + 1].sum() - (marginals[c] + marginals[d]) / 2.0
            delta2[c, d] = delta2[d, c] = between**2

    d_observed = float((coincidence * delta2).sum()) / n_total
    d_expected = float((np.outer(marginals, marginals) * delta2).sum()) / (
        n_total * (n_total - 1)
    )
    if d_expected == 0.0:
        return None
    return 1.0 - d_observed / d_expected


def kendall_tau(scores: Sequence[float], tags: Sequence[int]) -> Optional[float]:
    """Tie-corrected (tau-b) correlation between raw scores and ordinal tags."""
    _check_paired(scores, tags, min_len=2)
    scores = np.asarray(scores, dtype=np.float64)
    ranks = np.asarray([int(t) for t in tags], dtype=np.float64)
    if np.all(scores == scores[0]) or np.all(ranks == ranks[0]):
        return None
    tau, _ = kendalltau(scores, ranks)
    if np.isnan(tau):
        return None
    return float(tau)


@dataclass(frozen=True)
class SpanF1:
    precision: float
    recall: float
    f1: float


def _tags_compatible(pred: SpanTag, gold: SpanTag, n_tags: int) -> bool:
    if n_tags == 4:
        return pred == gold
    indication = {SpanTag.Giveaway, SpanTag.Strong}
    if pred in indication and gold in indication:
        return True
    return pred == gold


def lenient_span_f1(
    pred: Sequence[tuple[int, int, SpanTag]],
    gold: Sequence[tuple[int, int, SpanTag]],
    n_tags: int = 3,
) -> SpanF1:
    """Span precision/recall/F1 with lenient matching: one character of
    overlap with a compatible-tag gold span counts, and each gold span is
    creditable once.  With 2 tags, opposite-class spans are dropped first."""
    if n_tags not in (2, 3, 4):
        raise ValueError("n_tags must be 2, 3 or 4")
    if n_tags == 2:
        pred = [s for s in pred if s[2] is not SpanTag.Opposite]
        gold = [s for s in gold if s[2] is not SpanTag.Opposite]
    gold_used = [False] * len(gold)
    matched_pred = 0
    for p_start, p_end, p_tag in sorted(pred):
        for gi, (g_start, g_end, g_tag) in enumerate(gold):
            if gold_used[gi]:
                continue
            overlap = min(p_end, g_end) - max(p_start, g_start)
            if overlap >= 1 and _tags_compatible(p_tag, g_tag, n_tags):
                gold_used[gi] = True
                matched_pred += 1
                break
    precision = matched_pred / len(pred) if pred else 0.0
    recall = sum(gold_used) / len(gold) if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return SpanF1(precision=precision, recall=recall, f1=f1)


@dataclass(frozen=True)
class FrequencyScoreInput:
    """Top-ranked n-grams per class with their raw signed scores, plus the
    class-conditional occurrence counts of each n-gram."""

    top_positive: tuple[tuple[str, float], ...]
    top_negative: tuple[tuple[str, float], ...]
    counts_positive: Mapping[str, int]
    counts_negative: Mapping[str, int]


def frequency_score(inputs: FrequencyScoreInput) -> float:
    """Sum of score-times-count over the positive list minus the same sum
    over the negative list.  Large values mean the model's top n-grams
    track raw class-conditional frequencies."""
    total = 0.0
    for ngram, score in inputs.top_positive:
        total += score * inputs.counts_positive.get(ngram, 0)
    for ngram, score in inputs.top_negative:
        total -= score * inputs.counts_negative.get(ngram, 0)
    return total


@dataclass(frozen=True)
class RelevanceSummary:
    per_class_count: dict[str, int]
    per_class_percent: dict[str, float]
    average_count: float
    average_percent: float


def global_relevance(judged: Mapping[str, Sequence[tuple[str, bool]]]) -> RelevanceSummary:
    """Relevant-n-gram counts and percentages per class, plus their mean.

    `judged` maps a class name to (n-gram, relevant) judgments; an empty
    class contributes a count and percentage of 0.
    """
    counts: dict[str, int] = {}
    percents: dict[str, float] = {}
    for cls, items in judged.items():
        relevant = sum(1 for _, flag in items if flag)
        counts[cls] = relevant
        percents[cls] = 100.0 * relevant / len(items) if items else 0.0
    n_classes = max(len(judged), 1)
    return RelevanceSummary(
        per_class_count=counts,
        per_class_percent=percents,
        average_count=sum(counts.values()) / n_classes,
        average_percent=sum(percents.values()) / n_classes,
    )


def spans_to_token_tags(
    spans: Sequence[tuple[int, int, SpanTag]],
    offsets: Sequence[tuple[int, int]],
) -> list[TokenTag]:
    """Project character spans onto tokens.  A token overlapping several
    spans takes the most severe tag (giveaway, then strong, then opposite)."""
    severity = (TokenTag.Giveaway, TokenTag.Strong, TokenTag.Opposite)
    tags = [TokenTag.NoIndication] * len(offsets)
    for i, (t_start, t_end) in enumerate(offsets):
        hit: list[TokenTag] = []
        for s_start, s_end, s_tag in spans:
            if min(t_end, s_end) - max(t_start, s_start) >= 1:
                hit.append(SPAN_TO_TOKEN_TAG[s_tag])
        for level in severity:
            if level in hit:
                tags[i] = level
                break
    return tags


def tags_to_spans(
    tags: Sequence[TokenTag],
    offsets: Sequence[tuple[int, int]],
) -> list[tuple[int, int, SpanTag]]:
    """Merge maximal runs of identically tagged tokens into character spans."""
    reverse = {v: k for k, v in SPAN_TO_TOKEN_TAG.items()}
    spans = []
    i = 0
    while i < len(tags):
        if tags[i] is TokenTag.NoIndication:
            i += 1
            continue
        j = i
        while j + 1 < len(tags) and tags[j + 1] == tags[i]:
            j += 1
        spans.append((offsets[i][0], offsets[j][1], reverse[tags[i]]))
        i = j + 1
    return spans
