"""Post-hoc attribution for black-box scorers over token sequences.

All methods consume the same masking convention: an absent word is deleted
from the token sequence fed to the model, so neighbours re-join and n-grams
are re-extracted.  LIME and the exact Shapley oracle treat the d distinct
word types of a document as players; the partition explainer works on token
positions arranged in a punctuation-aware hierarchy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .text import TokenSeq

#: Connector words that make good split points when no punctuation helps.
CONNECTOR_WORDS = frozenset({"en", "maar", "of", "want", "dus"})

SENTENCE_PUNCT = set(".!?")
CLAUSE_PUNCT = set(",;:")

MAX_EXACT_PLAYERS = 15

TokenScorer = Callable[[Sequence[str]], float]
MaskedPredictFn = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class LocalExplanation:
    doc_id: str
    method: str
    scores: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(s) for s in self.scores):
            raise ValueError("explanation scores must be finite")


def word_types(tokens: Sequence[str]) -> list[str]:
    """Distinct words in order of first occurrence."""
    return list(dict.fromkeys(tokens))


def masked_word_fn(score_fn: TokenScorer, tokens: Sequence[str]) -> tuple[MaskedPredictFn, list[str]]:
    """Presence function over the document's distinct word types.

    A zero in the mask deletes every occurrence of that word type.  The
    all-ones mask reproduces the intact document.
    """
    types = word_types(tokens)
    index = {w: j for j, w in enumerate(types)}

    def f(mask: np.ndarray) -> float:
        kept = [t for t in tokens if mask[index[t]]]
        return float(score_fn(kept))

    return f, types


def masked_token_fn(score_fn: TokenScorer, tokens: Sequence[str]) -> MaskedPredictFn:
    """Presence function over token positions."""

    def f(mask: np.ndarray) -> float:
        kept = [t for i, t in enumerate(tokens) if mask[i]]
        return float(score_fn(kept))

    return f


def _weighted_ridge(
    Z: np.ndarray, y: np.ndarray, weights: np.ndarray, lam: float
) -> tuple[np.ndarray, float]:
    """Ridge with sample weights and an unpenalized intercept."""
    n, d = Z.shape
    A = np.column_stack([Z, np.ones(n)])
    penalty = np.diag(np.concatenate([np.full(d, lam), [0.0]]))
    lhs = A.T @ (A * weights[:, None]) + penalty
    rhs = A.T @ (weights * y)
    try:
        beta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return beta[:-1], float(beta[-1])


def _weighted_sse(Z, y, weights, coef, intercept) -> float:
    residual = y - (Z @ coef + intercept)
    return float(np.sum(weights * residual * residual))


def _forward_selection(Z, y, weights, lam, k: int) -> list[int]:
    """Greedily add the feature whose ridge fit most reduces weighted SSE."""
    d = Z.shape[1]
    selected: list[int] = []
    for _ in range(min(k, d)):
        best_j, best_sse = -1, np.inf
        for j in range(d):
            if j in selected:
                continue
            cols = selected + [j]
            coef, intercept = _weighted_ridge(Z[:, cols], y, weights, lam)
            sse = _weighted_sse(Z[:, cols], y, weights, coef, intercept)
            if sse < best_sse - 1e-15:
                best_j, best_sse = j, sse
        selected.append(best_j)
    return selected


def lime_scores(
    f: MaskedPredictFn,
    d: int,
    n: int = 100,
    nu: float = 25.0,
    lambda_ridge: float = 1.0,
    k_select: int = 10,
    lambda_select: float = 0.01,
    seed: int = 0,
) -> np.ndarray:
    """Word-type scores from a locally weighted ridge surrogate.

    The first of the n samples is the intact document; the rest each drop a
    uniformly sized random subset of word types.  Sample weight depends only
    on how many types were dropped, through the cosine-distance kernel
    sqrt(exp(-(dist * 100)^2 / nu^2)).  If d <= 6, features enter by forward
    selection; otherwise the k_select largest-magnitude coefficients of a
    lightly regularized full fit are kept.  Unselected types score zero.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if d < 1:
        raise ValueError("need at least one word type")
    rng = np.random.default_rng(seed)
    Z = np.ones((n, d))
    for i in range(1, n):
        size = int(rng.integers(1, d + 1))
        dropped = rng.choice(d, size=size, replace=False)
        Z[i, dropped] = 0.0
    kept = Z.sum(axis=1)
    # cos_dist(1, z) = 1 - sqrt(k/d); the empty mask gets distance 1 by
    # continuity.
    dist = 1.0 - np.sqrt(kept / d)
    weights = np.sqrt(np.exp(-((dist * 100.0) ** 2) / nu**2))
    y = np.array([f(Z[i]) for i in range(n)])

    if d <= 6:
        selected = _forward_selection(Z, y, weights, lambda_select, k_select)
    else:
        coef_all, _ = _weighted_ridge(Z, y, weights, lambda_select)
        order = sorted(range(d), key=lambda j: (-abs(coef_all[j]), j))
        selected = sorted(order[:k_select])

    coef, _ = _weighted_ridge(Z[:, selected], y, weights, lambda_ridge)
    scores = np.zeros(d)
    for position, j in enumerate(selected):
        scores[j] = coef[position]
    return scores


def lime_text(
    score_fn: TokenScorer,
    doc: TokenSeq,
    doc_id: str = "",
    n: int = 100,
    nu: float = 25.0,
    lambda_ridge: float = 1.0,
    k_select: int = 10,
    lambda_select: float = 0.01,
    seed: int = 0,
) -> LocalExplanation:
    """LIME for one document; word-type scores broadcast to occurrences."""
    f, types = masked_word_fn(score_fn, doc.tokens)
    type_scores = lime_scores(
        f, len(types), n=n, nu=nu, lambda_ridge=lambda_ridge,
        k_select=k_select, lambda_select=lambda_select, seed=seed,
    )
    index = {w: j for j, w in enumerate(types)}
    per_token = tuple(float(type_scores[index[t]]) for t in doc.tokens)
    return LocalExplanation(doc_id=doc_id, method="lime", scores=per_token)


@dataclass(frozen=True)
class PartitionNode:
    """Binary tree node over the token index range [start, end)."""

    start: int
    end: int
    left: Optional["PartitionNode"] = None
    right: Optional["PartitionNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def leaves(self) -> list[int]:
        if self.is_leaf:
            return [self.start]
        return self.left.leaves() + self.right.leaves()


def _boundary_priority(doc: TokenSeq, text: str, i: int) -> int:
    """Priority of splitting between tokens i and i+1 (lower is better)."""
    gap = text[doc.offsets[i][1] : doc.offsets[i + 1][0]]
    if any(ch in SENTENCE_PUNCT for ch in gap):
        return 0
    if any(ch in CLAUSE_PUNCT for ch in gap):
        return 1
    if doc.tokens[i + 1] in CONNECTOR_WORDS:
        return 2
    return 3


def build_token_hierarchy(doc: TokenSeq, text: str) -> PartitionNode:
    """Recursive splits preferring sentence punctuation, then clause
    punctuation, then connector words, then the midpoint.  Ties resolve to
    the boundary nearest the midpoint (then leftmost), so the tree is
    deterministic."""
    if len(doc.tokens) == 0:
        raise ValueError("cannot build a hierarchy over an empty document")
    priorities = [_boundary_priority(doc, text, i) for i in range(len(doc.tokens) - 1)]

    def build(start: int, end: int) -> PartitionNode:
        if end - start == 1:
            return PartitionNode(start=start, end=end)
        mid = (start + end) / 2.0
        best = min(
            range(start, end - 1),
            key=lambda i: (priorities[i], abs((i + 1) - mid), i),
        )
        return PartitionNode(
            start=start, end=end,
            left=build(start, best + 1), right=build(best + 1, end),
        )

    return build(0, len(doc.tokens))


def owen_values_from_tree(f: MaskedPredictFn, n_players: int, tree: PartitionNode) -> np.ndarray:
    """Recursive Owen attribution over a partition tree.

    At every internal node both child orders are averaged, each child
    evaluated with the sibling subtree absent and present under the current
    ancestor context.  The scores telescope, so they sum exactly to
    f(all-ones) - f(all-zeros).
    """
    leaves = tree.leaves()
    if sorted(leaves) != list(range(n_players)):
        raise ValueError("tree leaves do not cover the players exactly once")
    cache: dict[bytes, float] = {}

    def fv(mask: np.ndarray) -> float:
        key = mask.tobytes()
        value = cache.get(key)
        if value is None:
            value = float(f(mask))
            cache[key] = value
        return value

    phi = np.zeros(n_players)

    def rec(node: PartitionNode, context: np.ndarray, weight: float) -> None:
        if node.is_leaf:
            with_leaf = context.copy()
            with_leaf[node.start] = 1
            phi[node.start] += weight * (fv(with_leaf) - fv(context))
            return
        left, right = node.left, node.right
        with_left = context.copy()
        with_left[left.start : left.end] = 1
        with_right = context.copy()
        with_right[right.start : right.end] = 1
        rec(left, context, weight / 2)
        rec(right, with_left, weight / 2)
        rec(right, context, weight / 2)
        rec(left, with_right, weight / 2)

    rec(tree, np.zeros(n_players, dtype=np.int8), 1.0)
    return phi


def owen_values(
    score_fn: TokenScorer,
    doc: TokenSeq,
    text: str,
    doc_id: str = "",
    tree: Optional[PartitionNode] = None,
) -> LocalExplanation:
    """Partition-explainer scores for one document (players are tokens)."""
    if tree is None:
        tree = build_token_hierarchy(doc, text)
    f = masked_token_fn(score_fn, doc.tokens)
    phi = owen_values_from_tree(f, len(doc.tokens), tree)
    return LocalExplanation(doc_id=doc_id, method="owen", scores=tuple(float(v) for v in phi))


def exact_shapley_values(f: MaskedPredictFn, d: int) -> np.ndarray:
    """Textbook Shapley values by full subset enumeration (d <= 15)."""
    if d > MAX_EXACT_PLAYERS:
        raise ValueError(
            f"exact Shapley enumerates 2^d coalitions; d={d} exceeds "
            f"{MAX_EXACT_PLAYERS}. Use the partition explainer instead."
        )
    if d < 1:
        raise ValueError("need at least one player")
    values = np.empty(1 << d)
    mask = np.empty(d, dtype=np.int8)
    for m in range(1 << d):
        for i in range(d):
            mask[i] = (m >> i) & 1
        values[m] = float(f(mask))
    weights = [
        math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
        for s in range(d)
    ]
    phi = np.zeros(d)
    for i in range(d):
        bit = 1 << i
        for m in range(1 << d):
            if m & bit:
                continue
            s = bin(m).count("1")
            phi[i] += weights[s] * (values[m | bit] - values[m])
    return phi


def exact_shapley(score_fn: TokenScorer, doc: TokenSeq, doc_id: str = "") -> LocalExplanation:
    """Exact Shapley scores over word types, broadcast to occurrences."""
    f, types = masked_word_fn(score_fn, doc.tokens)
    phi = exact_shapley_values(f, len(types))
    index = {w: j for j, w in enumerate(types)}
    per_token = tuple(float(phi[index[t]]) for t in doc.tokens)
    return LocalExplanation(doc_id=doc_id, method="exact_shapley", scores=per_token)


@dataclass
class GlobalScores:
    """Word-type scores averaged over sampled documents."""

    mean_scores: dict[str, float]

    def top_k(self, k: int) -> tuple[list[tuple[str, float]], list[tuple[str, float]]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        items = sorted(self.mean_scores.items())
        positive = sorted(items, key=lambda kv: (-kv[1], kv[0]))[:k]
        negative = sorted(items, key=lambda kv: (kv[1], kv[0]))[:k]
        return positive, negative


def global_from_local(
    explain_fn: Callable[[TokenSeq, str], LocalExplanation],
    docs: Sequence[tuple[str, TokenSeq]],
    m: int = 100,
    seed: int = 0,
) -> GlobalScores:
    """Average per-token scores by word type over a sample of documents.

    Samples min(m, len(docs)) documents without replacement; every token
    occurrence in a sampled document contributes to its type's mean.
    """
    if not docs:
        raise ValueError("docs must be non-empty")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(docs), size=min(m, len(docs)), replace=False))
    totals: dict[str, float] = {}
    counts: dict[str, int] = {}
    for idx in chosen:
        doc_id, seq = docs[idx]
        explanation = explain_fn(seq, doc_id)
        if len(explanation.scores) != len(seq.tokens):
            raise ValueError(f"explanation for '{doc_id}' misaligned with its tokens")
        for token, score in zip(seq.tokens, explanation.scores):
            totals[token] = totals.get(token, 0.0) + score
            counts[token] = counts.get(token, 0) + 1
    return GlobalScores(mean_scores={t: totals[t] / counts[t] for t in totals})
