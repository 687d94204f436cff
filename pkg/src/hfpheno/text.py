"""Text normalization, n-gram vocabularies, and the TF-IDF representation.

Normalization removes punctuation (joining hyphenated halves), lowercases,
and replaces numeric tokens with the literal placeholder ``NUMBER``.  Token
offsets always point into the original, unnormalized text so downstream
spans can be rendered or compared against human annotations.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

#: Tokens that must survive normalization verbatim (placeholders inserted
#: upstream must not be re-lowercased or re-numbered).
PRESERVED_TOKENS = frozenset({"NUMBER", "EFMASK"})

NGram = tuple[str, ...]


def _is_removed_char(ch: str) -> bool:
    # Unicode punctuation plus ASCII symbol characters ($ + < = > ^ ` | ~).
    cat = unicodedata.category(ch)
    if cat.startswith("P"):
        return True
    return ch.isascii() and cat.startswith("S")


@dataclass(frozen=True)
class TokenSeq:
    """Normalized tokens plus their [start, end) spans in the source text."""

    tokens: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def slice_text(self, text: str, index: int) -> str:
        start, end = self.offsets[index]
        return text[start:end]


def normalize(text: str) -> TokenSeq:
    """Tokenize on whitespace, strip punctuation, lowercase, placehold numbers.

    Punctuation characters are deleted rather than split on, so hyphenated
    words collapse into a single token ("matig-slechte" -> "matigslechte").
    A token whose surviving core is all digits becomes "NUMBER"; glued
    percent signs and decimal separators are punctuation and thus already
    removed ("19%" -> "NUMBER").  Offsets cover the surviving core in the
    original text.
    """
    tokens: list[str] = []
    offsets: list[tuple[int, int]] = []
    core: list[str] = []
    start = end = -1

    def flush() -> None:
        nonlocal core, start, end
        if core:
            raw = "".join(core)
            if raw in PRESERVED_TOKENS:
                token = raw
            elif raw.isdigit():
                token = "NUMBER"
            else:
                token = raw.lower()
            tokens.append(token)
            offsets.append((start, end))
        core = []
        start = end = -1

    for i, ch in enumerate(text):
        if ch.isspace():
            flush()
        elif _is_removed_char(ch):
            continue
        else:
            if not core:
                start = i
            core.append(ch)
            end = i + 1
    flush()
    return TokenSeq(tokens=tuple(tokens), offsets=tuple(offsets))


def detokenize(seq: TokenSeq) -> str:
    return " ".join(seq.tokens)


@dataclass(frozen=True)
class VocabEntry:
    id: int
    count: int
    order: int


@dataclass
class Vocabulary:
    """Frequency-thresholded n-grams with dense, deterministic integer ids.

    Counts are corpus-wide occurrence counts (not document frequencies).
    Ids are assigned by sorting entries on (order, tokens), so rebuilding
    from the same corpus always yields identical ids.
    """

    entries: dict[NGram, VocabEntry]
    thresholds: dict[int, int]
    n_max: int
    _by_id: list[NGram] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if not self._by_id:
            by_id = [None] * len(self.entries)
            for ngram, entry in self.entries.items():
                by_id[entry.id] = ngram
            self._by_id = by_id  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, ngram: NGram) -> bool:
        return ngram in self.entries

    def ngram_for_id(self, ngram_id: int) -> NGram:
        return self._by_id[ngram_id]

    def ordered_ngrams(self) -> list[NGram]:
        return list(self._by_id)


def count_ngrams(corpus: Iterable[TokenSeq], n_max: int) -> dict[NGram, int]:
    counts: dict[NGram, int] = {}
    for seq in corpus:
        tokens = seq.tokens
        for n in range(1, n_max + 1):
            for i in range(len(tokens) - n + 1):
                gram = tokens[i : i + n]
                counts[gram] = counts.get(gram, 0) + 1
    return counts


def build_vocabulary(
    corpus: Sequence[TokenSeq],
    n_max: int,
    thresholds: Mapping[int, int],
) -> Vocabulary:
    """Count n-grams up to order n_max and keep those meeting the per-order
    minimum occurrence count."""
    if not (1 <= n_max <= 5):
        raise ValueError(f"n_max must be in [1, 5], got {n_max}")
    for n in range(1, n_max + 1):
        if n not in thresholds:
            raise ValueError(f"no threshold defined for n={n}")
    counts = count_ngrams(corpus, n_max)
    kept = {g: c for g, c in counts.items() if c >= thresholds[len(g)]}
    entries = {}
    for idx, gram in enumerate(sorted(kept, key=lambda g: (len(g), g))):
        entries[gram] = VocabEntry(id=idx, count=kept[gram], order=len(gram))
    return Vocabulary(entries=entries, thresholds=dict(thresholds), n_max=n_max)


@dataclass(frozen=True)
class NGramOccurrence:
    ngram_id: int
    start_token: int
    end_token: int  # exclusive


def doc_ngrams(doc: TokenSeq, vocab: Vocabulary) -> list[NGramOccurrence]:
    """Every in-vocabulary n-gram occurrence with its covering token range,
    ordered by position then order."""
    occurrences: list[NGramOccurrence] = []
    tokens = doc.tokens
    for i in range(len(tokens)):
        for n in range(1, vocab.n_max + 1):
            if i + n > len(tokens):
                break
            gram = tokens[i : i + n]
            entry = vocab.entries.get(gram)
            if entry is not None:
                occurrences.append(NGramOccurrence(entry.id, i, i + n))
    return occurrences


def save_vocab(vocab: Vocabulary, path) -> None:
    """Write vocab.tsv: id, order, count, space-joined n-gram."""
    with open(path, "w", encoding="utf-8") as fh:
        for gram in vocab.ordered_ngrams():
            entry = vocab.entries[gram]
            fh.write(f"{entry.id}\t{entry.order}\t{entry.count}\t{' '.join(gram)}\n")


def load_vocab(path, thresholds: Optional[Mapping[int, int]] = None) -> Vocabulary:
    entries: dict[NGram, VocabEntry] = {}
    n_max = 1
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            ngram_id, order, count, gram_text = line.split("\t")
            gram = tuple(gram_text.split(" "))
            entries[gram] = VocabEntry(id=int(ngram_id), count=int(count), order=int(order))
            n_max = max(n_max, int(order))
    thresholds = dict(thresholds) if thresholds else {n: 1 for n in range(1, n_max + 1)}
    return Vocabulary(entries=entries, thresholds=thresholds, n_max=n_max)


class TfidfEncoder:
    """TF-IDF over normalized unigrams with smoothed idf and L2 rows.

    idf(t) = ln((1 + N) / (1 + df_t)) + 1, rows are L2-normalized, and
    stop-words are dropped before counting.  Follows the fit/transform
    convention so it slots into the same pipelines as the embedders.
    """

    def __init__(self, stopwords: Iterable[str] = ()):
        self.stopwords = frozenset(stopwords)
        self.vocabulary_: Optional[dict[str, int]] = None
        self.idf_: Optional[np.ndarray] = None

    def get_params(self, deep: bool = True) -> dict:
        return {"stopwords": self.stopwords}

    def fit(self, corpus: Sequence[TokenSeq]) -> "TfidfEncoder":
        if len(corpus) == 0:
            raise ValueError("cannot fit TF-IDF on an empty corpus")
        df: dict[str, int] = {}
        for seq in corpus:
            for term in set(seq.tokens):
                if term not in self.stopwords:
                    df[term] = df.get(term, 0) + 1
        terms = sorted(df)
        self.vocabulary_ = {t: j for j, t in enumerate(terms)}
        n_docs = len(corpus)
        self.idf_ = np.array(
            [math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in terms], dtype=np.float64
        )
        return self

    def transform(self, corpus: Sequence[TokenSeq]) -> sp.csr_matrix:
        if self.vocabulary_ is None or self.idf_ is None:
            raise RuntimeError("TfidfEncoder is not fitted; call fit() first")
        rows, cols, data = [], [], []
        for i, seq in enumerate(corpus):
            tf: dict[int, int] = {}
            for token in seq.tokens:
                j = self.vocabulary_.get(token)
                if j is not None:
                    tf[j] = tf.get(j, 0) + 1
            for j, count in tf.items():
                rows.append(i)
                cols.append(j)
                data.append(count * self.idf_[j])
        X = sp.csr_matrix(
            (data, (rows, cols)), shape=(len(corpus), len(self.vocabulary_)), dtype=np.float64
        )
        norms = np.sqrt(X.multiply(X).sum(axis=1)).A1
        norms[norms == 0.0] = 1.0
        return sp.diags(1.0 / norms) @ X

    def fit_transform(self, corpus: Sequence[TokenSeq]) -> sp.csr_matrix:
        return self.fit(corpus).transform(corpus)


def tfidf_vectors(
    corpus: Sequence[TokenSeq], stopwords: Iterable[str] = ()
) -> tuple[sp.csr_matrix, dict[str, int]]:
    """Convenience wrapper returning the matrix and term-to-column mapping."""
    encoder = TfidfEncoder(stopwords)
    X = encoder.fit_transform(corpus)
    return X, dict(encoder.vocabulary_)
