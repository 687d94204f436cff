"""Command-line entry point wiring the full pipeline.

Subcommands: synth, label, train, predict, explain, agree, eval, report.
Every subcommand writes its primary outputs plus exactly one manifest.json
into --out; the manifest is the only file allowed to carry wall-clock time,
so reruns with identical inputs produce byte-identical primary outputs.

Exit codes: 0 success, 1 runtime error (single machine-parsable line on
stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .agreement import (
    TokenTag,
    cohen_kappa,
    collapse_tags,
    kendall_tau,
    krippendorff_alpha_ordinal,
    lenient_span_f1,
    scores_to_tags,
    spans_to_token_tags,
    tags_to_spans,
)
from .corpus import (
    CorpusError,
    LabelClass,
    ensure_dir,
    load_annotations,
    load_code_table,
    load_corpus,
    load_diagnosis_codes,
    load_echo,
    sha256_file,
    write_silver_labels,
)
from .evaluation import classification_report, stratified_folds
from .explainers import (
    LocalExplanation,
    exact_shapley,
    global_from_local,
    lime_text,
    owen_values,
)
from .labeling import label_corpus
from .pipeline import (
    VARIANTS,
    binary_labels,
    derive_seed,
    evaluation_tokens,
    fit_variant,
    load_model,
    run_grid,
    save_model,
    structured_rows,
)
from .report import write_report
from .synth import SynthConfig, generate, write_synth
from .text import normalize

LR_C_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3)
EBM_LR_GRID = (2e-2, 5e-2, 2e-3, 5e-3)


def write_manifest(out_dir, argv: Sequence[str], params: dict, seeds: dict,
                   inputs: Sequence[str], started: float) -> None:
    digests = {}
    for path in inputs:
        p = Path(path)
        if p.is_file():
            digests[str(path)] = sha256_file(p)
    config_hash = hashlib.sha256(
        json.dumps(params, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()
    manifest = {
        "command_line": list(argv),
        "config_hash": config_hash,
        "seeds": seeds,
        "input_digests": digests,
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    (Path(out_dir) / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8"
    )


def _load_labels_file(path) -> dict[str, LabelClass]:
    labels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                labels[obj["id"]] = LabelClass(obj["label"])
    return labels


def _parse_thresholds(pairs: Optional[Sequence[str]], n_max: int) -> dict[int, int]:
    thresholds = {n: 1 for n in range(1, n_max + 1)}
    for pair in pairs or ():
        try:
            n_text, k_text = pair.split("=", 1)
            thresholds[int(n_text)] = int(k_text)
        except ValueError as exc:
            raise ValueError(f"--threshold expects n=k, got '{pair}'") from exc
    return thresholds


def _embed_config(args) -> dict:
    config = {"kind": args.embedder, "dim": args.embed_dim, "seed": derive_seed(args.seed, "embed")}
    if args.embed_store:
        config["store"] = args.embed_store
    if args.embedder == "remote":
        config["url"] = os.environ.get("EMBED_URL")
    return config


def cmd_synth(args, argv) -> int:
    started = time.time()
    config = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        config.seed = derive_seed(args.seed, "synth")
    result = generate(config)
    out = ensure_dir(args.out)
    write_synth(result, out)
    write_manifest(out, argv, {"config": vars(config) | {
        "planted_positive": list(config.planted_positive),
        "planted_negative": list(config.planted_negative)}},
        {"synth": config.seed}, [args.config] if args.config else [], started)
    print(f"wrote {len(result.cases)} documents to {out}")
    return 0


def cmd_label(args, argv) -> int:
    started = time.time()
    cases = load_corpus(args.corpus)
    documents = [case.document for case in cases]
    echos = load_echo(args.echo) if args.echo else []
    echos_by_patient: dict[str, list] = {}
    for echo in echos:
        echos_by_patient.setdefault(echo.patient_id, []).append(echo)
    codes_by_doc = load_diagnosis_codes(args.codes) if args.codes else {}
    code_table = load_code_table(args.code_table) if args.code_table else load_code_table()
    rows, summary = label_corpus(documents, codes_by_doc, echos_by_patient, code_table)
    out = ensure_dir(args.out)
    write_silver_labels(rows, out / "silver_labels.jsonl")
    (out / "label_summary.tsv").write_text(summary.as_table(), encoding="utf-8")
    write_manifest(out, argv, {"corpus": args.corpus}, {},
                   [args.corpus, args.echo or "", args.codes or ""], started)
    print(summary.as_table(), end="")
    return 0


def cmd_train(args, argv) -> int:
    started = time.time()
    cases = load_corpus(args.corpus)
    labels = _load_labels_file(args.labels)
    kept, y = binary_labels(cases, labels)
    if len(kept) < 2:
        raise ValueError("need at least two labeled cases to train")
    seed = derive_seed(args.seed, "train")
    thresholds = _parse_thresholds(args.threshold, args.nmax)
    params = {
        "n_max": args.nmax,
        "thresholds": thresholds,
        "reg_c": args.reg_c,
        "learning_rate": args.learning_rate,
        "rounds": args.rounds,
        "bins": args.bins,
    }
    embed_config = _embed_config(args)
    out = ensure_dir(args.out)
    ids = [case.document.id for case in kept]
    plan = stratified_folds(y, args.folds, derive_seed(args.seed, "folds"), ids=ids)
    if args.grid:
        head_grid = ({"reg_c": list(LR_C_GRID)} if args.variant.endswith("lr")
                     or args.variant == "lr+struct"
                     else {"learning_rate": list(EBM_LR_GRID)})
        result = run_grid(args.variant, kept, y, head_grid, plan, embed_config, seed)
        (out / "grid_report.tsv").write_text(result.as_table(), encoding="utf-8")
        params.update(result.best_params)
    model = fit_variant(args.variant, kept, y, params, embed_config, seed=seed)
    save_model(model, out / "model")
    # Out-of-fold scores give the operating threshold without touching the
    # evaluation split.
    oof = np.empty(len(kept))
    fold_of = plan.indices(ids)
    for fold in range(args.folds):
        train_idx = np.flatnonzero(fold_of != fold)
        test_idx = np.flatnonzero(fold_of == fold)
        fold_model = fit_variant(args.variant, [kept[i] for i in train_idx], y[train_idx],
                                 params, embed_config, seed=seed)
        oof[test_idx] = fold_model.predict_scores([kept[i] for i in test_idx])
    report = classification_report(oof, y)
    (out / "cv_report.tsv").write_text(
        "metric\tvalue\n"
        f"auc\t{report.auc:.6f}\nprecision\t{report.precision:.6f}\n"
        f"recall\t{report.recall:.6f}\nf1\t{report.f1:.6f}\n"
        f"threshold\t{report.threshold!r}\n",
        encoding="utf-8",
    )
    write_manifest(out, argv, {"params": params, "variant": args.variant},
                   {"train": seed}, [args.corpus, args.labels], started)
    print(f"trained {args.variant}: cv auc {report.auc:.4f}, threshold {report.threshold:.4f}")
    return 0


def cmd_predict(args, argv) -> int:
    started = time.time()
    cases = load_corpus(args.corpus)
    model = load_model(args.model)
    scores = model.predict_scores(cases)
    out = ensure_dir(args.out)
    with open(out / "scores.jsonl", "w", encoding="utf-8") as fh:
        for case, score in zip(cases, scores):
            fh.write(json.dumps({"id": case.document.id, "score": float(score)}) + "\n")
    write_manifest(out, argv, {"model": str(args.model)}, {}, [args.corpus], started)
    print(f"scored {len(cases)} cases")
    return 0


def _explain_one(method: str, model, case, seq, seed: int) -> LocalExplanation:
    doc_id = case.document.id
    if method == "intrinsic":
        scores = model.aug.token_scores(seq)
        return LocalExplanation(doc_id=doc_id, method="intrinsic",
                                scores=tuple(float(s) for s in scores))
    structured_row = None
    if model.uses_structured:
        structured_row = model.imputer.transform(structured_rows([case]))[0]
    score_fn = model.prob_tokens_fn(structured_row)
    if method == "lime":
        return lime_text(score_fn, seq, doc_id, seed=derive_seed(seed, doc_id))
    if method == "owen":
        return owen_values(score_fn, seq, case.document.text, doc_id)
    if method == "exact":
        return exact_shapley(score_fn, seq, doc_id)
    raise ValueError(f"unknown method '{method}'")


def cmd_explain(args, argv) -> int:
    started = time.time()
    cases = load_corpus(args.corpus)
    model = load_model(args.model)
    if args.method == "intrinsic" and model.aug is None:
        raise ValueError("intrinsic explanations need an n-gram embedding model")
    if args.method != "intrinsic" and not model.uses_text:
        raise ValueError(f"variant '{model.variant}' has no text channel to explain")
    seed = derive_seed(args.seed, "explain")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(cases), size=min(args.m, len(cases)), replace=False))
    selected = [cases[i] for i in chosen]
    sequences = [normalize(case.document.text) for case in selected]
    jobs = args.jobs or os.cpu_count() or 1

    def work(i: int) -> LocalExplanation:
        return _explain_one(args.method, model, selected[i], sequences[i], args.seed)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            explanations = list(pool.map(work, range(len(selected))))
    else:
        explanations = [work(i) for i in range(len(selected))]

    out = ensure_dir(args.out)
    with open(out / "explanations.jsonl", "w", encoding="utf-8") as fh:
        for explanation in explanations:
            fh.write(json.dumps({
                "doc_id": explanation.doc_id,
                "method": explanation.method,
                "scores": list(explanation.scores),
            }) + "\n")

    by_id = {e.doc_id: e for e in explanations}

    def explain_cached(seq, doc_id):
        return by_id[doc_id]

    global_scores = global_from_local(
        explain_cached,
        [(case.document.id, seq) for case, seq in zip(selected, sequences)],
        m=len(selected), seed=seed,
    )
    positive, negative = global_scores.top_k(args.top_k)
    with open(out / "global_top.tsv", "w", encoding="utf-8") as fh:
        fh.write("class\trank\tngram\tscore\n")
        for rank, (token, score) in enumerate(positive, 1):
            fh.write(f"positive\t{rank}\t{token}\t{score:.6f}\n")
        for rank, (token, score) in enumerate(negative, 1):
            fh.write(f"negative\t{rank}\t{token}\t{score:.6f}\n")
    write_manifest(out, argv, {"method": args.method, "m": args.m},
                   {"explain": seed}, [args.corpus], started)
    print(f"explained {len(explanations)} documents with {args.method}")
    return 0


def _merge_annotator_spans(by_annotator: dict) -> list[tuple[int, int, object]]:
    """Union-merge all annotators' spans (token projection resolves clashes)."""
    merged = []
    for spans in by_annotator.values():
        merged.extend((span.start, span.end, span.tag) for span in spans)
    return sorted(merged)


def cmd_agree(args, argv) -> int:
    started = time.time()
    cases = load_corpus(args.corpus)
    documents = {case.document.id: case.document for case in cases}
    gold = load_annotations(args.gold, documents)
    predictions: dict[str, list[float]] = {}
    with open(args.pred, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                predictions[obj["doc_id"]] = obj["scores"]

    rows = []
    for doc_id in sorted(set(predictions) & set(gold)):
        doc = documents[doc_id]
        seq = normalize(doc.text)
        scores = predictions[doc_id]
        if len(scores) != len(seq.tokens):
            raise ValueError(f"scores for '{doc_id}' misaligned with its tokens")
        gold_spans = _merge_annotator_spans(gold[doc_id])
        gold_tags = spans_to_token_tags(gold_spans, seq.offsets)
        pred_tags = scores_to_tags(scores)
        a = collapse_tags(pred_tags, args.tags)
        b = collapse_tags(gold_tags, args.tags)
        kappa = cohen_kappa(a, b)
        alpha = krippendorff_alpha_ordinal(a, b)
        tau = kendall_tau(scores, b)
        span_scores = lenient_span_f1(
            tags_to_spans(pred_tags, seq.offsets), gold_spans, n_tags=args.tags
        )
        rows.append((doc_id, kappa, alpha, tau,
                     span_scores.precision, span_scores.recall, span_scores.f1))

    out = ensure_dir(args.out)

    def fmt(value) -> str:
        return "NA" if value is None else f"{value:.6f}"

    with open(out / "agreement.tsv", "w", encoding="utf-8") as fh:
        fh.write("doc_id\tkappa\talpha\ttau\tprecision\trecall\tf1\n")
        for row in rows:
            fh.write(row[0] + "\t" + "\t".join(fmt(v) for v in row[1:]) + "\n")
        for idx, name in ((1, "kappa"), (2, "alpha"), (3, "tau"),
                          (4, "precision"), (5, "recall"), (6, "f1")):
            defined = [row[idx] for row in rows if row[idx] is not None]
            median = f"{float(np.median(defined)):.6f}" if defined else "NA"
            fh.write(f"#median\t{name}\t{median}\t(n={len(defined)})\n")
    write_manifest(out, argv, {"tags": args.tags}, {}, [args.pred, args.gold, args.corpus],
                   started)
    print(f"agreement computed for {len(rows)} documents")
    return 0


def cmd_eval(args, argv) -> int:
    started = time.time()
    scores_by_id = {}
    with open(args.scores, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                scores_by_id[obj["id"]] = float(obj["score"])
    labels = _load_labels_file(args.labels)
    ids = sorted(set(scores_by_id) & {
        i for i, l in labels.items() if l in (LabelClass.HFrEF, LabelClass.HFpEF)
    })
    if not ids:
        raise ValueError("no overlapping ids between scores and labels")
    scores = np.array([scores_by_id[i] for i in ids])
    y = np.array([1.0 if labels[i] is LabelClass.HFrEF else 0.0 for i in ids])
    report = classification_report(scores, y, threshold=args.threshold)
    out = ensure_dir(args.out)
    with open(out / "eval.tsv", "w", encoding="utf-8") as fh:
        fh.write("name\tP [%]\tR [%]\tF1 [%]\tAUC [%]\tthreshold\tn\n")
        fh.write(
            f"{args.name}\t{100 * report.precision:.2f}\t{100 * report.recall:.2f}"
            f"\t{100 * report.f1:.2f}\t{100 * report.auc:.2f}"
            f"\t{report.threshold!r}\t{len(ids)}\n"
        )
    write_manifest(out, argv, {"threshold": args.threshold}, {},
                   [args.scores, args.labels], started)
    print(f"AUC {report.auc:.4f} P {report.precision:.4f} R {report.recall:.4f} "
          f"F1 {report.f1:.4f} (n={len(ids)})")
    return 0


def cmd_report(args, argv) -> int:
    started = time.time()
    cases = load_corpus(args.corpus)
    explanations = []
    with open(args.explanations, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                explanations.append(LocalExplanation(
                    doc_id=obj["doc_id"], method=obj["method"],
                    scores=tuple(float(s) for s in obj["scores"]),
                ))
    out = ensure_dir(args.out)
    write_report(cases, explanations, out / "report.html")
    write_manifest(out, argv, {}, {}, [args.corpus, args.explanations], started)
    print(f"rendered {len(explanations)} explanations")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfpheno",
        description="Phenotype heart-failure discharge letters and evaluate explanations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="synth config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="derive silver labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--echo")
    p.add_argument("--codes")
    p.add_argument("--code-table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a classifier variant")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="lr")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--nmax", type=int, default=1)
    p.add_argument("--threshold", action="append", metavar="n=k",
                   help="per-order n-gram count threshold (repeatable)")
    p.add_argument("--embedder", choices=("hashed", "file", "remote"), default="hashed")
    p.add_argument("--embed-dim", type=int, default=256)
    p.add_argument("--embed-store")
    p.add_argument("--reg-c", type=float, default=1.0)
    p.add_argument("--learning-rate", type=float, default=5e-2)
    p.add_argument("--rounds", type=int, default=2000)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--grid", action="store_true",
                   help="grid-search the head hyperparameter by CV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a corpus with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="produce local and global explanations")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--method", choices=("intrinsic", "lime", "owen", "exact"),
                   default="intrinsic")
    p.add_argument("--m", type=int, default=100, help="documents to sample")
    p.add_argument("--top-k", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("agree", help="score explanations against annotations")
    p.add_argument("--pred", required=True, help="explanations.jsonl")
    p.add_argument("--gold", required=True, help="annotations.jsonl")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tags", type=int, choices=(2, 3, 4), default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("eval", help="classification metrics from scores")
    p.add_argument("--scores", required=True, help="scores.jsonl")
    p.add_argument("--labels", required=True, help="labels jsonl")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--name", default="model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render explanations to HTML")
    p.add_argument("--corpus", required=True)
    p.add_argument("--explanations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (CorpusError, ValueError) as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single-line error contract
        print(f"error:runtime: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
