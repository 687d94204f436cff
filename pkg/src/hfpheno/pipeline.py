"""Wiring between corpora and the trainable variants.

Every variant follows the same discipline: texts destined for a model fit
pass through LVEF masking first, evaluation texts never do.  An optional
mask hook observes each masking call so the contract is testable.  Trained
models serialize to a directory of self-describing text files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .corpus import LabelClass, LabeledCase, ensure_dir, stopwords_nl
from .embeddings import HashedEmbedder, RemoteEmbedder, import_store, ngram_text
from .evaluation import FoldPlan, GridSearchResult, grid_search, roc_auc
from .labeling import mask_lvef
from .models.auglinear import AugLinearClassifier
from .models.ebm import CyclicGamClassifier
from .models.impute import ChainedImputer
from .models.linear import NewtonLogisticRegression, logistic
from .text import TokenSeq, TfidfEncoder, load_vocab, normalize, save_vocab

VARIANTS = (
    "lr", "ebm", "lr+struct", "ebm+struct",
    "tfidf-lr", "tfidf-ebm", "struct-lr", "struct-ebm",
)

#: HFrEF is the positive class everywhere.
POSITIVE_LABEL = LabelClass.HFrEF

MaskHook = Callable[[str], None]


def derive_seed(root_seed: int, label: str) -> int:
    """Stable per-stage seed derived from the root seed and a fixed label."""
    digest = hashlib.blake2b(
        f"{root_seed}:{label}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") % (2**32)


def binary_labels(cases: Sequence[LabeledCase], labels: dict[str, LabelClass]) -> tuple[list[LabeledCase], np.ndarray]:
    """Keep cases with a specified label; HFrEF maps to 1, HFpEF to 0."""
    kept, y = [], []
    for case in cases:
        label = labels.get(case.document.id)
        if label in (LabelClass.HFrEF, LabelClass.HFpEF):
            kept.append(case)
            y.append(1.0 if label is POSITIVE_LABEL else 0.0)
    return kept, np.array(y)


def training_tokens(cases: Sequence[LabeledCase], mask_hook: Optional[MaskHook] = None) -> list[TokenSeq]:
    """Masked and normalized texts, for fitting only."""
    out = []
    for case in cases:
        if mask_hook is not None:
            mask_hook(case.document.id)
        out.append(normalize(mask_lvef(case.document.text)))
    return out


def evaluation_tokens(cases: Sequence[LabeledCase]) -> list[TokenSeq]:
    """Normalized texts with LVEF expressions left intact."""
    return [normalize(case.document.text) for case in cases]


def structured_rows(cases: Sequence[LabeledCase]) -> list[list]:
    rows = []
    for case in cases:
        if case.structured is None:
            raise ValueError(
                f"case '{case.document.id}' has no structured covariates but the "
                "variant requires them"
            )
        rows.append(case.structured.as_row())
    return rows


def embedder_from_config(config: dict):
    kind = config.get("kind", "hashed")
    if kind == "hashed":
        return HashedEmbedder(dim=config.get("dim", 256), seed=config.get("seed", 0))
    if kind == "file":
        return import_store(config["store"])
    if kind == "remote":
        return RemoteEmbedder(
            base_url=config.get("url"), dim=config.get("dim", 768),
            cache_dir=config.get("cache_dir"),
        )
    raise ValueError(f"unknown embedder kind '{kind}'")


@dataclass
class TrainedModel:
    """A fitted variant plus everything needed to score new cases."""

    variant: str
    head_name: str
    aug: Optional[AugLinearClassifier] = None
    tfidf: Optional[TfidfEncoder] = None
    tfidf_head: Optional[object] = None
    imputer: Optional[ChainedImputer] = None
    struct_head: Optional[object] = None
    params: Optional[dict] = None

    @property
    def uses_text(self) -> bool:
        return not self.variant.startswith("struct-")

    @property
    def uses_structured(self) -> bool:
        return "struct" in self.variant

    def _structured_matrix(self, cases: Sequence[LabeledCase]) -> Optional[np.ndarray]:
        if not self.uses_structured:
            return None
        return self.imputer.transform(structured_rows(cases))

    def predict_scores(self, cases: Sequence[LabeledCase], masked: bool = False) -> np.ndarray:
        """Positive-class probabilities; evaluation texts stay unmasked."""
        structured = self._structured_matrix(cases)
        if self.variant.startswith("struct-"):
            return self.struct_head.predict_proba(structured)
        tokens = training_tokens(cases) if masked else evaluation_tokens(cases)
        if self.variant.startswith("tfidf-"):
            X = self.tfidf.transform(tokens).toarray()
            return self.tfidf_head.predict_proba(X)
        return self.aug.predict_proba(tokens, structured)

    def prob_tokens_fn(self, structured_row: Optional[np.ndarray] = None) -> Callable[[Sequence[str]], float]:
        """Token-sequence scorer used by the post-hoc explainers."""
        if not self.uses_text:
            raise ValueError(f"variant '{self.variant}' has no text channel to explain")
        if self.variant.startswith("tfidf-"):
            def score(tokens: Sequence[str]) -> float:
                seq = TokenSeq(tokens=tuple(tokens), offsets=tuple((0, 0) for _ in tokens))
                X = self.tfidf.transform([seq]).toarray()
                return float(self.tfidf_head.predict_proba(X)[0])

            return score
        return lambda tokens: self.aug.prob_tokens(tokens, structured_row)


def _make_head(head_name: str, params: dict, seed: int):
    if head_name == "lr":
        return NewtonLogisticRegression(reg_c=params.get("reg_c", 1.0), seed=seed)
    return CyclicGamClassifier(
        learning_rate=params.get("learning_rate", 5e-2),
        rounds=params.get("rounds", 2000),
        bins=params.get("bins", 64),
        seed=seed,
    )


def fit_variant(
    variant: str,
    cases: Sequence[LabeledCase],
    y: np.ndarray,
    params: Optional[dict] = None,
    embed_config: Optional[dict] = None,
    seed: int = 0,
    mask_hook: Optional[MaskHook] = None,
) -> TrainedModel:
    """Fit one variant on (already label-filtered) cases."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}'; choose from {VARIANTS}")
    params = dict(params or {})
    head_name = "ebm" if variant.endswith("ebm") or variant == "ebm+struct" else "lr"
    model = TrainedModel(variant=variant, head_name=head_name, params=params)

    if model.uses_structured:
        model.imputer = ChainedImputer().fit(structured_rows(cases))
    structured = model._structured_matrix(cases)

    if variant.startswith("struct-"):
        model.struct_head = _make_head(head_name, params, seed).fit(structured, y)
        return model

    tokens = training_tokens(cases, mask_hook)
    if variant.startswith("tfidf-"):
        model.tfidf = TfidfEncoder(stopwords=stopwords_nl()).fit(tokens)
        X = model.tfidf.transform(tokens).toarray()
        model.tfidf_head = _make_head(head_name, params, seed).fit(X, y)
        return model

    embedder = embedder_from_config(embed_config or {"kind": "hashed", "dim": 256, "seed": seed})
    n_max = params.get("n_max", 1)
    thresholds = params.get("thresholds") or {n: 1 for n in range(1, n_max + 1)}
    aug = AugLinearClassifier(
        embedder=embedder,
        head=head_name,
        n_max=n_max,
        thresholds=thresholds,
        reg_c=params.get("reg_c", 1.0),
        learning_rate=params.get("learning_rate", 5e-2),
        rounds=params.get("rounds", 2000),
        bins=params.get("bins", 64),
        seed=seed,
    )
    aug.fit(tokens, y, structured=structured)
    model.aug = aug
    return model


def cv_fit_and_score(
    variant: str,
    cases: Sequence[LabeledCase],
    y: np.ndarray,
    params: dict,
    embed_config: Optional[dict],
    seed: int,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    mask_hook: Optional[MaskHook] = None,
) -> float:
    """One fold: fit on masked training cases, score raw held-out cases."""
    train_cases = [cases[i] for i in train_idx]
    test_cases = [cases[i] for i in test_idx]
    model = fit_variant(variant, train_cases, y[train_idx], params, embed_config,
                        seed=seed, mask_hook=mask_hook)
    scores = model.predict_scores(test_cases)
    return roc_auc(scores, y[test_idx])


def run_grid(
    variant: str,
    cases: Sequence[LabeledCase],
    y: np.ndarray,
    grid: dict,
    fold_plan: FoldPlan,
    embed_config: Optional[dict] = None,
    seed: int = 0,
    mask_hook: Optional[MaskHook] = None,
) -> GridSearchResult:
    ids = [case.document.id for case in cases]

    def fit_and_score(params: dict, train_idx: np.ndarray, test_idx: np.ndarray) -> float:
        return cv_fit_and_score(variant, cases, y, params, embed_config, seed,
                                train_idx, test_idx, mask_hook)

    return grid_search(fit_and_score, grid, fold_plan, ids)


# -- model artifact serialization -------------------------------------------


def _format_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _parse_floats(text: str) -> np.ndarray:
    if text == "":
        return np.array([], dtype=np.float64)
    return np.array([float(v) for v in text.split(",")], dtype=np.float64)


def _save_lr(head: NewtonLogisticRegression, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"bias\t{float(head.intercept_)!r}\n")
        fh.write(f"weights\t{_format_floats(head.coef_)}\n")


def _load_lr(path: Path) -> NewtonLogisticRegression:
    head = NewtonLogisticRegression()
    for line in path.read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("\t")
        if key == "bias":
            head.intercept_ = float(value)
        elif key == "weights":
            head.coef_ = _parse_floats(value)
    return head


def _save_ebm(head: CyclicGamClassifier, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"intercept\t{float(head.intercept_)!r}\n")
        for j, (edges, shape) in enumerate(zip(head.edges_, head.shapes_)):
            fh.write(f"edges\t{j}\t{_format_floats(edges)}\n")
            fh.write(f"shape\t{j}\t{_format_floats(shape)}\n")


def _load_ebm(path: Path) -> CyclicGamClassifier:
    head = CyclicGamClassifier()
    edges: dict[int, np.ndarray] = {}
    shapes: dict[int, np.ndarray] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        fields = line.split("\t")
        if fields[0] == "intercept":
            head.intercept_ = float(fields[1])
        elif fields[0] == "edges":
            edges[int(fields[1])] = _parse_floats(fields[2])
        elif fields[0] == "shape":
            shapes[int(fields[1])] = _parse_floats(fields[2])
    head.edges_ = [edges[j] for j in sorted(edges)]
    head.shapes_ = [shapes[j] for j in sorted(shapes)]
    return head


def _save_head(head, head_name: str, path: Path) -> None:
    if head_name == "lr":
        _save_lr(head, path)
    else:
        _save_ebm(head, path)


def _load_head(head_name: str, path: Path):
    return _load_lr(path) if head_name == "lr" else _load_ebm(path)


def save_model(model: TrainedModel, out_dir) -> Path:
    out = ensure_dir(out_dir)
    meta = {
        "variant": model.variant,
        "head": model.head_name,
        "params": model.params,
        "version": __version__,
    }
    if model.aug is not None:
        save_vocab(model.aug.vocab_, out / "vocab.tsv")
        meta["vocab_hash"] = hashlib.sha256((out / "vocab.tsv").read_bytes()).hexdigest()
        meta["embed_dim"] = model.aug.embedder.dim
        meta["struct_dim"] = model.aug.struct_dim_
        meta["n_max"] = model.aug.n_max
        names = [ngram_text(g) for g in model.aug.vocab_.ordered_ngrams()]
        with open(out / "embeddings.tsv", "w", encoding="utf-8") as fh:
            fh.write(f"dim={model.aug.embedder.dim}\n")
            for name, row in zip(names, model.aug.embeddings_):
                fh.write(f"{name}\t{_format_floats(row)}\n")
        _save_head(model.aug.head_model_, model.head_name, out / "head.txt")
    if model.tfidf is not None:
        with open(out / "tfidf.tsv", "w", encoding="utf-8") as fh:
            for term, j in sorted(model.tfidf.vocabulary_.items(), key=lambda kv: kv[1]):
                fh.write(f"{term}\t{float(model.tfidf.idf_[j])!r}\n")
        _save_head(model.tfidf_head, model.head_name, out / "head.txt")
    if model.struct_head is not None:
        _save_head(model.struct_head, model.head_name, out / "head.txt")
    if model.imputer is not None:
        (out / "imputer.json").write_text(
            json.dumps(model.imputer.spec(), sort_keys=True), encoding="utf-8"
        )
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8")
    return out


class _StoredEmbedder:
    """Vocabulary-aligned embedding rows restored from a model artifact."""

    def __init__(self, dim: int):
        self.dim = dim

    def embed(self, ngram: str) -> np.ndarray:  # pragma: no cover - guard only
        raise RuntimeError("stored models embed via their materialized matrix")


def load_model(model_dir) -> TrainedModel:
    model_dir = Path(model_dir)
    meta = json.loads((model_dir / "meta.json").read_text(encoding="utf-8"))
    model = TrainedModel(variant=meta["variant"], head_name=meta["head"],
                         params=meta.get("params") or {})
    if (model_dir / "imputer.json").exists():
        model.imputer = ChainedImputer.from_spec(
            json.loads((model_dir / "imputer.json").read_text(encoding="utf-8"))
        )
    head = _load_head(meta["head"], model_dir / "head.txt")
    if model.variant.startswith("struct-"):
        model.struct_head = head
        return model
    if model.variant.startswith("tfidf-"):
        tfidf = TfidfEncoder(stopwords=stopwords_nl())
        vocabulary: dict[str, int] = {}
        idf: list[float] = []
        for line in (model_dir / "tfidf.tsv").read_text(encoding="utf-8").splitlines():
            term, value = line.split("\t")
            vocabulary[term] = len(idf)
            idf.append(float(value))
        tfidf.vocabulary_ = vocabulary
        tfidf.idf_ = np.array(idf)
        model.tfidf = tfidf
        model.tfidf_head = head
        return model
    vocab = load_vocab(model_dir / "vocab.tsv")
    store = import_store(model_dir / "embeddings.tsv")
    aug = AugLinearClassifier(
        embedder=_StoredEmbedder(meta["embed_dim"]),
        head=meta["head"],
        n_max=meta["n_max"],
    )
    aug.vocab_ = vocab
    aug.embeddings_ = np.vstack(
        [store.embed(ngram_text(g)) for g in vocab.ordered_ngrams()]
    )
    aug.head_model_ = head
    aug.struct_dim_ = meta.get("struct_dim", 0)
    model.aug = aug
    return model
