import numpy as np
import pytest

from hfpheno.embeddings import HashedEmbedder
from hfpheno.models.auglinear import AugLinearClassifier, doc_vector
from hfpheno.text import build_vocabulary, doc_ngrams, normalize


def seqs(*texts):
    return [normalize(t) for t in texts]


@pytest.fixture
def fitted_lr():
    train = seqs(
        "ziek hart zwak vocht", "ziek hart zwak oedeem", "zwak hart vocht klachten",
        "gezond hart sterk fit", "gezond hart sterk training", "sterk hart fit conditie",
    )
    y = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    clf = AugLinearClassifier(embedder=HashedEmbedder(dim=48, seed=2), head="lr",
                              n_max=2, reg_c=10.0)
    return clf.fit(train, y), train, y


class TestDocVector:
    def vocab_and_matrix(self):
        corpus = seqs("a b c", "b c d")
        vocab = build_vocabulary(corpus, 2, {1: 1, 2: 1})
        rng = np.random.default_rng(0)
        E = rng.normal(size=(len(vocab), 5))
        return corpus, vocab, E

    def test_single_occurrence_equals_embedding(self):
        corpus, vocab, E = self.vocab_and_matrix()
        occ = doc_ngrams(normalize("a"), vocab)
        np.testing.assert_array_equal(doc_vector(occ, E), E[vocab.entries[("a",)].id])

    def test_duplicated_text_doubles_vector(self):
        _, vocab, E = self.vocab_and_matrix()
        once = doc_vector(doc_ngrams(normalize("a b"), vocab), E)
        twice = doc_vector(doc_ngrams(normalize("a b a b"), vocab), E)
        # "a b a b" has the occurrences of "a b" twice plus the bridging
        # bigram (b, a); that bigram is out-of-vocabulary here, so the sum
        # doubles exactly.
        assert ("b", "a") not in vocab.entries
        np.testing.assert_allclose(twice, 2 * once, atol=1e-12)

    def test_concatenation_linearity_unigrams(self):
        corpus = seqs("a b c d")
        vocab = build_vocabulary(corpus, 1, {1: 1})
        rng = np.random.default_rng(1)
        E = rng.normal(size=(len(vocab), 5))
        v_joined = doc_vector(doc_ngrams(normalize("a b c d"), vocab), E)
        v_sum = (doc_vector(doc_ngrams(normalize("a b"), vocab), E)
                 + doc_vector(doc_ngrams(normalize("c d"), vocab), E))
        np.testing.assert_allclose(v_joined, v_sum, atol=1e-12)

    def test_concatenation_with_bridging_ngrams(self):
        corpus, vocab, E = self.vocab_and_matrix()
        joined = normalize("a b c d")
        v_joined = doc_vector(doc_ngrams(joined, vocab), E)
        v_sum = (doc_vector(doc_ngrams(normalize("a b"), vocab), E)
                 + doc_vector(doc_ngrams(normalize("c d"), vocab), E))
        bridge = doc_vector(
            [o for o in doc_ngrams(joined, vocab)
             if o.start_token < 2 and o.end_token > 2], E,
        )
        np.testing.assert_allclose(v_joined, v_sum + bridge, atol=1e-12)

    def test_empty_doc_zero_vector(self):
        _, vocab, E = self.vocab_and_matrix()
        np.testing.assert_array_equal(doc_vector([], E), np.zeros(5))

    def test_structured_concatenated(self):
        _, vocab, E = self.vocab_and_matrix()
        vec = doc_vector([], E, structured=np.array([1.0, 2.0]))
        assert vec.shape == (7,)
        np.testing.assert_array_equal(vec[5:], [1.0, 2.0])


class TestIntrinsicScores:
    def test_single_ngram_document_identity(self, fitted_lr):
        clf, _, _ = fitted_lr
        doc = normalize("ziek")
        logit = clf.decision_function([doc])[0]
        assert logit - clf.head_model_.intercept_ == pytest.approx(
            clf.ngram_score(("ziek",)), abs=1e-12
        )

    def test_completeness_sum_of_occurrence_scores(self, fitted_lr):
        clf, train, _ = fitted_lr
        for doc in train:
            total = sum(score for _, score in clf.occurrence_scores(doc))
            logit = clf.decision_function([doc])[0]
            assert abs(total + clf.head_model_.intercept_ - logit) < 1e-9

    def test_unknown_ngram_rejected(self, fitted_lr):
        clf, _, _ = fitted_lr
        with pytest.raises(KeyError):
            clf.ngram_score(("onbekend",))

    def test_ebm_head_scores_finite_and_ranked(self):
        train = seqs("ziek zwak", "ziek moe", "fit sterk", "fit blij")
        y = np.array([1.0, 1.0, 0.0, 0.0])
        clf = AugLinearClassifier(embedder=HashedEmbedder(dim=16, seed=1), head="ebm",
                                  n_max=1, rounds=400, bins=4).fit(train, y)
        scores = clf.ngram_id_scores()
        assert np.all(np.isfinite(scores))
        assert clf.ngram_score(("ziek",)) > clf.ngram_score(("fit",))


class TestTokenScores:
    def build(self, unigram_score, trigram_score):
        """A tiny model with controlled scores for one unigram and the
        trigram covering it."""
        train = seqs("een twee drie", "vier vijf zes")
        y = np.array([1.0, 0.0])
        clf = AugLinearClassifier(embedder=HashedEmbedder(dim=8, seed=0), head="lr",
                                  n_max=3)
        clf.fit(train, y)
        scores = clf.ngram_id_scores()
        scores[:] = 0.0
        scores[clf.vocab_.entries[("twee",)].id] = unigram_score
        scores[clf.vocab_.entries[("een", "twee", "drie")].id] = trigram_score
        return clf

    def test_higher_order_wins_when_higher(self):
        clf = self.build(unigram_score=0.5, trigram_score=0.9)
        scores = clf.token_scores(normalize("een twee drie"))
        assert scores[1] == pytest.approx(0.9)

    def test_own_score_wins_when_higher(self):
        clf = self.build(unigram_score=0.9, trigram_score=0.5)
        scores = clf.token_scores(normalize("een twee drie"))
        assert scores[1] == pytest.approx(0.9)

    def test_uncovered_token_scores_zero(self, fitted_lr):
        clf, _, _ = fitted_lr
        scores = clf.token_scores(normalize("volstrekt onbekend woord"))
        np.testing.assert_array_equal(scores, np.zeros(3))


class TestGlobalTopK:
    def test_full_ordering_when_k_large(self, fitted_lr):
        clf, _, _ = fitted_lr
        pos, neg = clf.global_top_k(10_000)
        assert len(pos) == len(clf.vocab_) == len(neg)
        values = [s for _, s in pos]
        assert values == sorted(values, reverse=True)

    def test_negated_weights_swap_lists(self, fitted_lr):
        clf, _, _ = fitted_lr
        pos_before, neg_before = clf.global_top_k(5)
        clf.head_model_.coef_ = -clf.head_model_.coef_
        clf._ngram_scores = None
        pos_after, neg_after = clf.global_top_k(5)
        assert [g for g, _ in pos_after] == [g for g, _ in neg_before]
        assert [g for g, _ in neg_after] == [g for g, _ in pos_before]

    def test_k_below_one_rejected(self, fitted_lr):
        clf, _, _ = fitted_lr
        with pytest.raises(ValueError):
            clf.global_top_k(0)

    def test_refit_invalidates_cached_scores(self):
        clf = AugLinearClassifier(embedder=HashedEmbedder(dim=16, seed=0), head="lr",
                                  n_max=1, reg_c=10.0)
        first = seqs("ziek zwak", "fit sterk")
        clf.fit(first, np.array([1.0, 0.0]))
        before = clf.ngram_score(("ziek",))
        clf.fit(seqs("ziek sterk", "fit zwak"), np.array([0.0, 1.0]))
        after = clf.ngram_score(("ziek",))
        assert before != after

    def test_planted_signal_tops_ranking(self):
        rng = np.random.default_rng(6)
        filler = [f"w{i}" for i in range(30)]
        pos_docs, neg_docs = [], []
        for _ in range(60):
            base = list(rng.choice(filler, size=12))
            pos_docs.append(" ".join(base + ["signaalpos"]))
            base = list(rng.choice(filler, size=12))
            neg_docs.append(" ".join(base + ["signaalneg"]))
        docs = seqs(*(pos_docs + neg_docs))
        y = np.array([1.0] * 60 + [0.0] * 60)
        clf = AugLinearClassifier(embedder=HashedEmbedder(dim=64, seed=3), head="lr",
                                  n_max=1, reg_c=10.0).fit(docs, y)
        pos, neg = clf.global_top_k(1)
        assert pos[0][0] == ("signaalpos",)
        assert neg[0][0] == ("signaalneg",)


class TestPredictions:
    def test_argmax_invariance_scaling(self, fitted_lr):
        clf, train, _ = fitted_lr
        before = clf.predict(train)
        clf.head_model_.coef_ = clf.head_model_.coef_ * 3.0
        clf.head_model_.intercept_ = clf.head_model_.intercept_ * 3.0
        assert np.array_equal(clf.predict(train), before)

    def test_prob_tokens_matches_predict_proba(self, fitted_lr):
        clf, train, _ = fitted_lr
        for doc in train:
            assert clf.prob_tokens(list(doc.tokens)) == pytest.approx(
                float(clf.predict_proba([doc])[0]), abs=1e-12
            )
