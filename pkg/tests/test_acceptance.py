"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured evidence (run with -s or -v to see them)."""

import datetime
import itertools
import json
import math
import time

import numpy as np
import pytest

from hfpheno.agreement import (
    cohen_kappa,
    global_relevance,
    kendall_tau,
    krippendorff_alpha_ordinal,
    FrequencyScoreInput,
    frequency_score,
)
from hfpheno.cli import dispatch
from hfpheno.corpus import (
    Document,
    EchoMeasurement,
    EchoMethod,
    LabelClass,
    LabelSource,
    Site,
    load_code_table,
)
from hfpheno.evaluation import roc_auc, stratified_folds, youden_threshold
from hfpheno.explainers import (
    build_token_hierarchy,
    exact_shapley_values,
    lime_scores,
    owen_values_from_tree,
)
from hfpheno.labeling import (
    MentionKind,
    assign_silver_label,
    extract_lvef_mentions,
    label_from_codes,
    label_from_echo,
    label_from_text,
    mask_lvef,
)
from hfpheno.models.ebm import CyclicGamClassifier
from hfpheno.models.linear import log_loss_and_grad
from hfpheno.pipeline import binary_labels, fit_variant
from hfpheno.synth import SynthConfig, generate
from hfpheno.text import count_ngrams, normalize

ADMIT = datetime.date(2021, 3, 1)
DISCHARGE = datetime.date(2021, 3, 8)


def doc(i, text="routine opname zonder bijzonderheden", patient=None):
    return Document(id=f"g{i:02d}", patient_id=patient or f"gp{i:02d}",
                    admission_date=ADMIT, discharge_date=DISCHARGE,
                    text=text, site=Site.A)


def echo(value, method=EchoMethod.Biplane, date=None, high=None, patient="p"):
    return EchoMeasurement(patient_id=patient, date=date or ADMIT,
                           method=method, lvef_low=value,
                           lvef_high=high if high is not None else value)


def golden_fixture():
    """40 cases covering every labeling rule, with expected (label, source)."""
    cases = []  # (document, codes, echos, expected_label, expected_source)
    table = load_code_table()
    for i, entry in enumerate(table):  # 25 cases: every table code
        expected = LabelClass.HFrEF if entry.implies.value == "Systolic" else LabelClass.HFpEF
        cases.append((doc(i), [(entry.system, entry.code)], [], expected, LabelSource.Code))
    i = len(cases)
    # 26: contradictory codes abstain, echo decides
    cases.append((doc(i), [("ICD10CM", "I50.21"), ("ICD10CM", "I50.31")],
                  [echo(38)], LabelClass.HFrEF, LabelSource.Echo))
    # 27: method priority, biplane beats teichholz
    cases.append((doc(27), [], [echo(55, EchoMethod.Teichholz), echo(38, EchoMethod.Biplane)],
                  LabelClass.HFrEF, LabelSource.Echo))
    # 28: volumetric beats biplane
    cases.append((doc(28), [], [echo(42, EchoMethod.Biplane), echo(60, EchoMethod.Volumetric3D4D)],
                  LabelClass.HFpEF, LabelSource.Echo))
    # 29: range wider than 10 discarded, survivor decides
    cases.append((doc(29), [], [echo(35, EchoMethod.SinglePlane, high=50),
                                echo(52, EchoMethod.Teichholz)],
                  LabelClass.HFpEF, LabelSource.Echo))
    # 30: lower bound of a narrow range decides
    cases.append((doc(30), [], [echo(38, high=46)], LabelClass.HFrEF, LabelSource.Echo))
    # 31/32: window edges at admission-90 and discharge+90 inclusive
    cases.append((doc(31), [], [echo(35, date=ADMIT - datetime.timedelta(days=90))],
                  LabelClass.HFrEF, LabelSource.Echo))
    cases.append((doc(32), [], [echo(55, date=DISCHARGE + datetime.timedelta(days=90))],
                  LabelClass.HFpEF, LabelSource.Echo))
    # 33: one day outside the window, text takes over
    cases.append((doc(33, text="controle LVEF 55"),
                  [], [echo(35, date=ADMIT - datetime.timedelta(days=91))],
                  LabelClass.HFpEF, LabelSource.Text))
    # 34: reduced measurement wins over preserved in the same window
    cases.append((doc(34), [], [echo(38), echo(55, date=ADMIT + datetime.timedelta(days=3))],
                  LabelClass.HFrEF, LabelSource.Echo))
    # 35-38: text forms
    cases.append((doc(35, text="echo: LVEF 19%."), [], [], LabelClass.HFrEF, LabelSource.Text))
    cases.append((doc(36, text="ejectiefractie: 35-40"), [], [], LabelClass.HFrEF, LabelSource.Text))
    cases.append((doc(37, text="gemeten ef 52.5 vandaag"), [], [], LabelClass.HFpEF, LabelSource.Text))
    cases.append((doc(38, text="ejectiefractie 45 met diastolische dysfunctie"), [], [],
                  LabelClass.HFpEF, LabelSource.Text))
    # 39: negated cue yields no label at all
    cases.append((doc(39, text="geen diastolische dysfunctie gezien"), [], [], None, None))
    # 40: unnegated systolic cue
    cases.append((doc(40, text="ernstige systolische dysfunctie"), [], [],
                  LabelClass.HFrEF, LabelSource.Text))
    assert len(cases) == 40
    return cases


def test_criterion_01_labeling_fidelity():
    table = load_code_table()
    started = time.perf_counter()
    mismatches = []
    for document, codes, echos, expected_label, expected_source in golden_fixture():
        silver = assign_silver_label(document, codes, echos, table)
        got = (None, None) if silver is None else (silver.label, silver.source)
        if got != (expected_label, expected_source):
            mismatches.append((document.id, got, (expected_label, expected_source)))
    elapsed = time.perf_counter() - started
    assert mismatches == []
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 1 PASS - 40/40 golden labeling cases exact in {elapsed:.3f}s")


def test_criterion_02_precedence_property():
    rng = np.random.default_rng(2024)
    table = load_code_table()
    code_pool = [(e.system, e.code) for e in table]
    texts = [
        "routine controle zonder metingen",
        "echo toont LVEF 25", "ejectiefractie 45", "ef 55", "EF: 35-40",
        "ejection fraction 60.5", "diastolische dysfunctie graad II",
        "ernstige systolische dysfunctie", "geen systolische dysfunctie",
        "geen diastolische dysfunctie maar wel klachten",
    ]
    violations = 0
    for i in range(10_000):
        codes = [code_pool[int(k)] for k in rng.integers(0, len(code_pool),
                                                         size=int(rng.integers(0, 3)))]
        echos = []
        for _ in range(int(rng.integers(0, 3))):
            low = float(rng.integers(10, 75))
            high = min(100.0, low + float(rng.integers(0, 15)))
            offset = int(rng.integers(-120, 120))
            echos.append(echo(low, list(EchoMethod)[int(rng.integers(0, 4))],
                              date=ADMIT + datetime.timedelta(days=offset), high=high))
        document = doc(0, text=texts[int(rng.integers(0, len(texts)))])
        silver = assign_silver_label(document, codes, echos, table)
        stages = [
            (label_from_codes(codes, table).label, LabelSource.Code),
            (label_from_echo(document, echos), LabelSource.Echo),
            (label_from_text(document.text), LabelSource.Text),
        ]
        expected = next(((label, source) for label, source in stages if label is not None),
                        None)
        got = None if silver is None else (silver.label, silver.source)
        if got != expected:
            violations += 1
    assert violations == 0
    print("\nACCEPTANCE 2 PASS - precedence holds on 10,000 generated cases")


def test_criterion_03_intrinsic_completeness():
    result = generate(SynthConfig(n_docs=1000, seed=31, doc_len_min=20, doc_len_max=45))
    cases, y = binary_labels(result.cases, result.true_labels)
    model = fit_variant("lr", cases, y, {"n_max": 2},
                        {"kind": "hashed", "dim": 64}, seed=1)
    aug = model.aug
    checked = 0
    worst = 0.0
    from hfpheno.pipeline import evaluation_tokens

    for seq, logit in zip(evaluation_tokens(cases), aug.decision_function(evaluation_tokens(cases))):
        total = sum(score for _, score in aug.occurrence_scores(seq))
        gap = abs(total + aug.head_model_.intercept_ - logit)
        worst = max(worst, gap)
        checked += 1
    assert checked >= 1000 * 0.4  # only labeled cases enter, most docs are labeled
    assert worst < 1e-9
    print(f"\nACCEPTANCE 3 PASS - logit reconstruction gap max {worst:.2e} over {checked} docs")


def test_criterion_03_completeness_on_full_thousand():
    # The reconstruction identity is purely representational, so it also
    # holds for unlabeled documents scored by the same model.
    result = generate(SynthConfig(n_docs=1000, seed=32, doc_len_min=15, doc_len_max=30))
    cases, y = binary_labels(result.cases, result.true_labels)
    model = fit_variant("lr", cases, y, {"n_max": 1}, {"kind": "hashed", "dim": 48}, seed=2)
    aug = model.aug
    sequences = [normalize(case.document.text) for case in result.cases]
    logits = aug.decision_function(sequences)
    worst = max(
        abs(sum(s for _, s in aug.occurrence_scores(seq)) + aug.head_model_.intercept_ - logit)
        for seq, logit in zip(sequences, logits)
    )
    assert len(sequences) == 1000
    assert worst < 1e-9
    print(f"\nACCEPTANCE 3b PASS - identity holds on all 1000 documents (max {worst:.2e})")


def test_criterion_04_planted_signal_recovery():
    started = time.perf_counter()
    config = SynthConfig(n_docs=2000, seed=99, injection_prob=0.8)
    result = generate(config)
    cases, y = binary_labels(result.cases, result.true_labels)
    ids = [case.document.id for case in cases]
    plan = stratified_folds(y, 4, seed=0, ids=ids)
    fold_of = plan.indices(ids)
    train_idx = np.flatnonzero(fold_of != 0)
    test_idx = np.flatnonzero(fold_of == 0)
    model = fit_variant("lr", [cases[i] for i in train_idx], y[train_idx],
                        {"n_max": 1}, {"kind": "hashed", "dim": 256}, seed=0)
    auc = roc_auc(model.predict_scores([cases[i] for i in test_idx]), y[test_idx])
    top_pos, top_neg = model.aug.global_top_k(15)
    hits_pos = sum(1 for g, _ in top_pos if g in {(w,) for w in config.planted_positive})
    hits_neg = sum(1 for g, _ in top_neg if g in {(w,) for w in config.planted_negative})
    elapsed = time.perf_counter() - started
    assert auc >= 0.95
    assert hits_pos >= 8 and hits_neg >= 8
    assert elapsed < 120.0
    print(f"\nACCEPTANCE 4 PASS - held-out AUC {auc:.3f}, planted top-15 hits "
          f"{hits_pos}/10 and {hits_neg}/10, {elapsed:.1f}s")


def kendall_simple(a, b):
    concordant = discordant = 0
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            s = (a[i] - a[j]) * (b[i] - b[j])
            concordant += s > 0
            discordant += s < 0
    return (concordant - discordant) / (len(a) * (len(a) - 1) / 2)


def test_criterion_05_lime_oracle():
    rng = np.random.default_rng(7)
    w = rng.normal(size=8)
    taus = []
    for seed in range(20):
        scores = lime_scores(lambda z: float(z @ w), d=8, seed=seed)
        taus.append(kendall_simple(scores, w))
    median_tau = float(np.median(taus))
    assert median_tau >= 0.9
    constant = lime_scores(lambda z: 0.42, d=8, seed=0)
    assert np.max(np.abs(constant)) < 1e-10
    print(f"\nACCEPTANCE 5 PASS - LIME median tau {median_tau:.3f}, constant model max "
          f"|score| {np.max(np.abs(constant)):.1e}")


def test_criterion_06_shapley_owen():
    rng = np.random.default_rng(11)
    worst_gap = 0.0
    for trial in range(50):
        d = 4 + trial % 3
        table = rng.random(2**d)

        def f(mask, table=table):
            return float(table[int(sum(int(m) << i for i, m in enumerate(mask)))])

        exact = exact_shapley_values(f, d)
        oracle = np.zeros(d)
        for order in itertools.permutations(range(d)):
            mask = np.zeros(d, dtype=np.int8)
            before = f(mask)
            for player in order:
                mask[player] = 1
                after = f(mask)
                oracle[player] += after - before
                before = after
        oracle /= math.factorial(d)
        worst_gap = max(worst_gap, float(np.max(np.abs(exact - oracle))))
    assert worst_gap < 1e-12

    # Owen completeness on synthetic documents scored by a trained model.
    result = generate(SynthConfig(n_docs=120, seed=17, doc_len_min=6, doc_len_max=14))
    cases, y = binary_labels(result.cases, result.true_labels)
    model = fit_variant("lr", cases, y, {"n_max": 2}, {"kind": "hashed", "dim": 32}, seed=0)
    score_fn = model.prob_tokens_fn()
    worst_completeness = 0.0
    for case in cases[:40]:
        text = case.document.text
        seq = normalize(text)
        tree = build_token_hierarchy(seq, text)
        from hfpheno.explainers import masked_token_fn

        f = masked_token_fn(score_fn, seq.tokens)
        phi = owen_values_from_tree(f, len(seq.tokens), tree)
        n = len(seq.tokens)
        gap = abs(phi.sum() - (f(np.ones(n, dtype=np.int8)) - f(np.zeros(n, dtype=np.int8))))
        worst_completeness = max(worst_completeness, gap)
    assert worst_completeness < 1e-9

    # Two players: Owen coincides with exact Shapley.
    table2 = rng.random(4)

    def f2(mask):
        return float(table2[int(mask[0]) + 2 * int(mask[1])])

    seq2 = normalize("a b")
    tree2 = build_token_hierarchy(seq2, "a b")
    np.testing.assert_allclose(
        owen_values_from_tree(f2, 2, tree2), exact_shapley_values(f2, 2), atol=1e-12
    )
    print(f"\nACCEPTANCE 6 PASS - exact-vs-permutation gap {worst_gap:.1e}, owen "
          f"completeness {worst_completeness:.1e}, owen=shapley at d=2")


def _random_metric_instances(rng, n_max=30):
    n = int(rng.integers(2, n_max + 1))
    scores = rng.normal(size=n)
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    tags_a = rng.integers(0, 4, size=n)
    tags_b = rng.integers(0, 4, size=n)
    return scores, labels, tags_a, tags_b


def test_criterion_07_metric_oracles():
    from test_agreement import alpha_bruteforce, kappa_bruteforce, tau_b_bruteforce
    from test_evaluation import auc_pair_count, youden_bruteforce

    rng = np.random.default_rng(123)
    for _ in range(100):
        scores, labels, tags_a, tags_b = _random_metric_instances(rng)
        kappa = cohen_kappa(list(tags_a), list(tags_b))
        kappa_ref = kappa_bruteforce(list(tags_a), list(tags_b))
        assert (kappa is None) == (kappa_ref is None)
        if kappa is not None:
            assert abs(kappa - kappa_ref) < 1e-10
        alpha = krippendorff_alpha_ordinal(list(tags_a), list(tags_b))
        alpha_ref = alpha_bruteforce(list(tags_a), list(tags_b))
        assert (alpha is None) == (alpha_ref is None)
        if alpha is not None:
            assert abs(alpha - alpha_ref) < 1e-10
        tau = kendall_tau(scores, list(tags_b))
        tau_ref = tau_b_bruteforce(list(scores), list(tags_b))
        assert (tau is None) == (tau_ref is None)
        if tau is not None:
            assert abs(tau - tau_ref) < 1e-10
        assert abs(roc_auc(scores, labels) - auc_pair_count(scores, labels)) < 1e-10
        assert youden_threshold(scores, labels) == youden_bruteforce(scores, labels)[0]

    # Hand-computed anchors.
    assert cohen_kappa([2, 2, 1, 1], [2, 1, 2, 1]) == pytest.approx(0.0, abs=1e-15)
    summary = global_relevance({
        "HFrEF": [(f"g{i}", True) for i in range(15)],
        "HFpEF": [(f"h{i}", i < 2) for i in range(15)],
    })
    assert summary.average_count == pytest.approx(8.5)
    # Counts 15 and 2 of 15 force percentages 100.00 and 13.33, whose mean
    # is 56.67 to two decimals.
    assert summary.average_percent == pytest.approx((100.0 + 100.0 * 2 / 15) / 2, abs=1e-12)
    assert round(summary.average_percent, 2) == 56.67
    print("\nACCEPTANCE 7 PASS - 100 random instances match brute force for all five "
          "metrics; hand anchors reproduce (kappa 0.0; avg count 8.5, avg pct 56.67)")


def test_criterion_08_frequency_score_ordering():
    config = SynthConfig(n_docs=600, seed=23)
    result = generate(config)
    positive_ids = {i for i, label in result.true_labels.items()
                    if label is LabelClass.HFrEF}
    pos_docs, neg_docs = [], []
    for case in result.cases:
        seq = normalize(case.document.text)
        (pos_docs if case.document.id in positive_ids else neg_docs).append(seq)
    counts_pos = {g[0]: c for g, c in count_ngrams(pos_docs, 1).items()}
    counts_neg = {g[0]: c for g, c in count_ngrams(neg_docs, 1).items()}

    top_pos_by_count = sorted(counts_pos, key=counts_pos.get, reverse=True)[:50]
    top_neg_by_count = sorted(counts_neg, key=counts_neg.get, reverse=True)[:50]
    frequency_driven = FrequencyScoreInput(
        top_positive=tuple((g, float(counts_pos[g])) for g in top_pos_by_count),
        top_negative=tuple((g, -float(counts_neg[g])) for g in top_neg_by_count),
        counts_positive=counts_pos,
        counts_negative=counts_neg,
    )
    frequency_agnostic = FrequencyScoreInput(
        top_positive=tuple((w, 1.0) for w in config.planted_positive),
        top_negative=tuple((w, -1.0) for w in config.planted_negative),
        counts_positive=counts_pos,
        counts_negative=counts_neg,
    )
    driven = frequency_score(frequency_driven)
    agnostic = frequency_score(frequency_agnostic)
    assert driven > agnostic
    print(f"\nACCEPTANCE 8 PASS - frequency-driven score {driven:.1f} > "
          f"frequency-agnostic {agnostic:.1f}")


def test_criterion_09_solver_checks():
    rng = np.random.default_rng(321)
    worst_rel = 0.0
    for _ in range(10):
        n, d = int(rng.integers(8, 30)), int(rng.integers(2, 8))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n).astype(float)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        w = rng.normal(scale=0.5, size=d)
        b = float(rng.normal())
        reg_c = float(rng.uniform(0.5, 5.0))
        _, grad_w, grad_b = log_loss_and_grad(w, b, X, y, reg_c)
        eps = 1e-6

        def loss(w_, b_):
            z = X @ w_ + b_
            p = 1 / (1 + np.exp(-z))
            return (-np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
                    + 0.5 * (w_ @ w_) / reg_c)

        for j in range(d):
            delta = np.zeros(d)
            delta[j] = eps
            fd = (loss(w + delta, b) - loss(w - delta, b)) / (2 * eps)
            worst_rel = max(worst_rel, abs(grad_w[j] - fd) / max(abs(fd), 1e-8))
        fd_b = (loss(w, b + eps) - loss(w, b - eps)) / (2 * eps)
        worst_rel = max(worst_rel, abs(grad_b - fd_b) / max(abs(fd_b), 1e-8))
    assert worst_rel < 1e-5

    worst_increase = -np.inf
    for seed in range(10):
        rng2 = np.random.default_rng(seed)
        X = rng2.normal(size=(50, 3))
        y = rng2.integers(0, 2, size=50).astype(float)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        model = CyclicGamClassifier(learning_rate=5e-2, rounds=240, bins=8).fit(X, y)
        worst_increase = max(worst_increase,
                             float(np.max(np.diff(model.train_loss_per_cycle_))))
    assert worst_increase <= 1e-12
    print(f"\nACCEPTANCE 9 PASS - gradient max rel err {worst_rel:.1e}; EBM worst "
          f"per-cycle loss delta {worst_increase:.1e}")


def test_criterion_10_masking_contract():
    rng = np.random.default_rng(55)
    triggers = ["LVEF", "lvef", "EF", "ef", "ejectiefractie", "ejection fraction",
                "Ejectiefractie:", "EF:"]
    fillers = ["opname", "controle", "beloop", "gewicht stabiel", "medicatie gestart"]
    cues = ["systolische dysfunctie", "diastolische dysfunctie"]
    failures = 0
    for i in range(10_000):
        parts = [fillers[int(rng.integers(0, len(fillers)))]]
        trigger = triggers[int(rng.integers(0, len(triggers)))]
        value = int(rng.integers(5, 80))
        if rng.random() < 0.3:
            mention = f"{trigger} {value}-{value + int(rng.integers(1, 12))}"
        elif rng.random() < 0.5:
            mention = f"{trigger} {value}.{int(rng.integers(0, 10))}"
        else:
            mention = f"{trigger} {value}%"
        parts.append(mention)
        if rng.random() < 0.3:
            parts.append(cues[int(rng.integers(0, 2))])
        parts.append(fillers[int(rng.integers(0, len(fillers)))])
        text = " ".join(parts)
        masked = mask_lvef(text)
        numeric = [m for m in extract_lvef_mentions(masked)
                   if m.kind is MentionKind.Numeric]
        if numeric or mask_lvef(masked) != masked:
            failures += 1
    assert failures == 0
    print("\nACCEPTANCE 10 PASS - zero numeric mentions after masking on 10,000 texts; "
          "masking idempotent")


def test_criterion_11_pipeline_determinism(tmp_path):
    outputs = []
    for name in ("first", "second"):
        root = tmp_path / name
        data = root / "data"
        assert dispatch(["synth", "--out", str(data), "--seed", "17"]) == 0
        assert dispatch(["label", "--corpus", str(data / "corpus.jsonl"),
                         "--echo", str(data / "echo.jsonl"),
                         "--codes", str(data / "diagnosis_codes.jsonl"),
                         "--out", str(root / "labels")]) == 0
        assert dispatch(["train", "--corpus", str(data / "corpus.jsonl"),
                         "--labels", str(root / "labels" / "silver_labels.jsonl"),
                         "--variant", "lr", "--folds", "3", "--embed-dim", "48",
                         "--seed", "17", "--out", str(root / "trained")]) == 0
        assert dispatch(["predict", "--model", str(root / "trained" / "model"),
                         "--corpus", str(data / "corpus.jsonl"),
                         "--out", str(root / "preds")]) == 0
        assert dispatch(["explain", "--model", str(root / "trained" / "model"),
                         "--corpus", str(data / "corpus.jsonl"), "--method", "intrinsic",
                         "--m", "15", "--seed", "17",
                         "--out", str(root / "expl")]) == 0
        assert dispatch(["agree", "--pred", str(root / "expl" / "explanations.jsonl"),
                         "--gold", str(data / "annotations.jsonl"),
                         "--corpus", str(data / "corpus.jsonl"),
                         "--out", str(root / "agree")]) == 0
        assert dispatch(["eval", "--scores", str(root / "preds" / "scores.jsonl"),
                         "--labels", str(data / "truth.jsonl"),
                         "--out", str(root / "evald")]) == 0
        snapshot = {}
        for path in sorted(root.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                snapshot[str(path.relative_to(root))] = path.read_bytes()
        outputs.append(snapshot)
    assert outputs[0].keys() == outputs[1].keys()
    different = [k for k in outputs[0] if outputs[0][k] != outputs[1][k]]
    assert different == []
    print(f"\nACCEPTANCE 11 PASS - {len(outputs[0])} primary output files byte-identical "
          "across two pipeline runs")
