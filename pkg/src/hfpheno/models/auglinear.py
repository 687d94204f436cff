"""Interpretable classifiers over summed n-gram embeddings.

A document is represented as the sum of the embeddings of its in-vocabulary
n-gram occurrences, optionally concatenated with the standardized structured
covariates.  Either linear-model head yields intrinsic explanations: for the
logistic head the per-occurrence scores plus the bias reconstruct the
document logit exactly.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .._validation import check_is_fitted
from ..embeddings import embed_batch, ngram_text
from ..text import NGram, TokenSeq, Vocabulary, build_vocabulary, doc_ngrams
from .ebm import CyclicGamClassifier
from .linear import NewtonLogisticRegression, logistic


def doc_vector(
    occurrences,
    embedding_matrix: np.ndarray,
    structured: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sum of occurrence embeddings, each occurrence counted, optionally
    concatenated with a structured-covariate block."""
    dim = embedding_matrix.shape[1]
    vec = np.zeros(dim, dtype=np.float64)
    for occ in occurrences:
        vec += embedding_matrix[occ.ngram_id]
    if structured is not None:
        vec = np.concatenate([vec, np.asarray(structured, dtype=np.float64)])
    return vec


class AugLinearClassifier(BaseEstimator, ClassifierMixin):
    """n-gram-embedding classifier with a logistic or additive head.

    Parameters
    ----------
    embedder : provider with .dim and .embed(text); vectors are computed
        once per vocabulary entry at fit time and reused everywhere.
    head : "lr" for the Newton logistic head, "ebm" for cyclic boosting.
    n_max, thresholds : n-gram orders and per-order minimum counts for the
        fitted vocabulary (thresholds default to 1 for every order).
    """

    def __init__(
        self,
        embedder,
        head: str = "lr",
        n_max: int = 1,
        thresholds: Optional[dict[int, int]] = None,
        reg_c: float = 1.0,
        learning_rate: float = 5e-2,
        rounds: int = 2000,
        bins: int = 64,
        seed: int = 0,
    ):
        self.embedder = embedder
        self.head = head
        self.n_max = n_max
        self.thresholds = thresholds
        self.reg_c = reg_c
        self.learning_rate = learning_rate
        self.rounds = rounds
        self.bins = bins
        self.seed = seed
        self.vocab_: Vocabulary | None = None
        self.embeddings_: np.ndarray | None = None
        self.head_model_ = None
        self.struct_dim_: int = 0

    # -- fitting -----------------------------------------------------------

    def fit(
        self,
        docs: Sequence[TokenSeq],
        y,
        structured: Optional[np.ndarray] = None,
        vocab: Optional[Vocabulary] = None,
    ) -> "AugLinearClassifier":
        if self.head not in ("lr", "ebm"):
            raise ValueError(f"unknown head '{self.head}'")
        thresholds = self.thresholds or {n: 1 for n in range(1, self.n_max + 1)}
        self._ngram_scores = None
        self.vocab_ = vocab if vocab is not None else build_vocabulary(docs, self.n_max, thresholds)
        names = [ngram_text(g) for g in self.vocab_.ordered_ngrams()]
        self.embeddings_ = embed_batch(self.embedder, names)
        self.struct_dim_ = 0 if structured is None else np.asarray(structured).shape[1]
        X = self._matrix(docs, structured)
        if self.head == "lr":
            self.head_model_ = NewtonLogisticRegression(
                reg_c=self.reg_c, seed=self.seed
            ).fit(X, y)
        else:
            self.head_model_ = CyclicGamClassifier(
                learning_rate=self.learning_rate, rounds=self.rounds, bins=self.bins,
                seed=self.seed,
            ).fit(X, y)
        return self

    def _matrix(self, docs: Sequence[TokenSeq], structured: Optional[np.ndarray]) -> np.ndarray:
        if structured is not None and len(docs) != len(structured):
            raise ValueError("docs and structured rows have mismatched lengths")
        rows = np.zeros((len(docs), self.embedder.dim + self.struct_dim_))
        for i, doc in enumerate(docs):
            struct_row = None if structured is None else structured[i]
            rows[i] = doc_vector(doc_ngrams(doc, self.vocab_), self.embeddings_, struct_row)
        return rows

    # -- prediction --------------------------------------------------------

    def decision_function(
        self, docs: Sequence[TokenSeq], structured: Optional[np.ndarray] = None
    ) -> np.ndarray:
        check_is_fitted(self, "head_model_")
        return self.head_model_.decision_function(self._matrix(docs, structured))

    def predict_proba(
        self, docs: Sequence[TokenSeq], structured: Optional[np.ndarray] = None
    ) -> np.ndarray:
        return logistic(self.decision_function(docs, structured))

    def predict(self, docs, structured=None, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(docs, structured) >= threshold).astype(int)

    def prob_tokens(
        self, tokens: Sequence[str], structured_row: Optional[np.ndarray] = None
    ) -> float:
        """Positive-class probability for a bare token sequence.

        This is the hook the post-hoc explainers perturb: word deletions
        re-join neighbours, so n-grams are re-extracted from the remaining
        sequence.
        """
        check_is_fitted(self, "head_model_")
        seq = TokenSeq(tokens=tuple(tokens), offsets=tuple((0, 0) for _ in tokens))
        occurrences = doc_ngrams(seq, self.vocab_)
        if self.head == "lr" and self.struct_dim_ == 0:
            scores = self.ngram_id_scores()
            z = self.head_model_.intercept_ + sum(scores[o.ngram_id] for o in occurrences)
            return float(logistic(np.array([z]))[0])
        struct_row = structured_row
        if self.struct_dim_ and struct_row is None:
            struct_row = np.zeros(self.struct_dim_)
        vec = doc_vector(occurrences, self.embeddings_, struct_row)
        return float(self.head_model_.predict_proba(vec.reshape(1, -1))[0])

    # -- intrinsic explanations ---------------------------------------------

    def ngram_id_scores(self) -> np.ndarray:
        """Signed relevance score per vocabulary id (text block only).

        Logistic head: the embedding-times-weights product.  Additive head:
        the sum of per-dimension shape contributions at the embedding.
        """
        check_is_fitted(self, "head_model_")
        if getattr(self, "_ngram_scores", None) is not None:
            return self._ngram_scores
        E = self.embeddings_
        if self.head == "lr":
            weights = self.head_model_.coef_[: self.embedder.dim]
            scores = E @ weights
        else:
            scores = np.zeros(E.shape[0])
            for d in range(self.embedder.dim):
                scores += self.head_model_.feature_contribution(d, E[:, d])
        self._ngram_scores = scores
        return scores

    def ngram_score(self, ngram: NGram | str) -> float:
        if isinstance(ngram, str):
            ngram = tuple(ngram.split(" "))
        entry = self.vocab_.entries.get(ngram)
        if entry is None:
            raise KeyError(f"n-gram not in vocabulary: {ngram}")
        return float(self.ngram_id_scores()[entry.id])

    def occurrence_scores(self, doc: TokenSeq) -> list[tuple]:
        """(occurrence, score) for every in-vocabulary n-gram occurrence."""
        scores = self.ngram_id_scores()
        return [(occ, float(scores[occ.ngram_id])) for occ in doc_ngrams(doc, self.vocab_)]

    def token_scores(self, doc: TokenSeq) -> np.ndarray:
        """Per-token signed scores.

        A token's own unigram score competes with the scores of every
        higher-order n-gram covering it; the highest wins.  Tokens in no
        in-vocabulary n-gram score zero.
        """
        scored = self.occurrence_scores(doc)
        result = np.zeros(len(doc.tokens))
        candidates: list[list[float]] = [[] for _ in doc.tokens]
        for occ, score in scored:
            for t in range(occ.start_token, occ.end_token):
                candidates[t].append(score)
        for t, cand in enumerate(candidates):
            if cand:
                result[t] = max(cand)
        return result

    def global_top_k(self, k: int) -> tuple[list[tuple[NGram, float]], list[tuple[NGram, float]]]:
        """Top-k n-grams for the positive class (descending score) and the
        negative class (ascending score); ties break on vocabulary id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.ngram_id_scores()
        ids = np.arange(len(scores))
        pos_order = sorted(ids, key=lambda i: (-scores[i], i))[:k]
        neg_order = sorted(ids, key=lambda i: (scores[i], i))[:k]
        to_pairs = lambda order: [(self.vocab_.ngram_for_id(i), float(scores[i])) for i in order]
        return to_pairs(pos_order), to_pairs(neg_order)
