"""Deterministic synthetic corpora with planted class signal.

Every document's true class is drawn first; class-consistent diagnosis
codes, echo measurements, LVEF text statements, and planted indicator
n-grams are then injected with configured probabilities.  Filler text is
pseudo-Dutch and deliberately exercises punctuation, hyphens, and numeric
tokens.  No filler word contains the substring "ef" or any dysfunction cue,
so a document without injections can never earn a silver label.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import (
    AnnotationSpan,
    CodeSystem,
    Document,
    EchoMeasurement,
    EchoMethod,
    LabelClass,
    LabeledCase,
    Site,
    SpanTag,
    StructuredRecord,
    ensure_dir,
    load_code_table,
    write_annotations,
    write_corpus,
    write_diagnosis_codes,
    write_echo,
)

FILLER_WORDS = (
    "patiënt", "opname", "afdeling", "cardiologie", "onderzoek", "bloeddruk",
    "hartslag", "medicatie", "tablet", "dagelijks", "controle", "polikliniek",
    "rustig", "stabiel", "klachten", "benauwd", "vocht", "gewicht", "nierwaarden",
    "longen", "schoon", "souffle", "oedeem", "enkels", "beloop", "ontslag",
    "naar", "huis", "verwezen", "huisarts", "anamnese", "lichamelijk",
    "laboratorium", "natrium", "kalium", "kreatinine", "stijging", "daling",
    "gestart", "gestaakt", "verhoogd", "verlaagd", "tensie", "pols", "ritme",
    "sinusritme", "boezem", "kamer", "klep", "insufficiëntie", "stenose",
    "gering", "matig", "fors", "ernstig", "conclusie", "advies", "vervolg",
    "aanvullend", "consult", "overleg", "familie", "mobiliseren", "fysiotherapie",
    "voeding", "zout", "beperkt", "vochtbalans", "diurese", "gewichtscontrole",
    "thuis", "wekelijks", "maandelijks", "gebeld", "afspraak", "en",
    "maar", "of", "want", "dus", "bij", "zonder", "tijdens", "na", "voor",
)

HYPHEN_PAIRS = ("matig-slechte", "acuut-op-chronisch", "links-rechts", "dag-nacht")

NUMERIC_NOISE = ("12", "3,5", "120/80", "98%", "7", "250")

PLANTED_POSITIVE_DEFAULT = (
    "zwakke", "pompwerking", "gedilateerd", "stuwing", "vullingsdruk",
    "inotropie", "dobutamine", "kardiale", "remodellering", "tachycardie",
)

PLANTED_NEGATIVE_DEFAULT = (
    "gespaard", "relaxatie", "stijve", "vaatwand", "hypertrofie",
    "diastole", "compliantie", "vertraagd", "instroom", "atriale",
)

LVEF_TRIGGERS = ("LVEF", "EF", "ejectiefractie")

ANNOTATOR = "truth"

BASE_DATE = datetime.date(2020, 1, 1)


@dataclass
class SynthConfig:
    n_docs: int = 200
    positive_fraction: float = 0.5
    filler_vocab_size: int = len(FILLER_WORDS)
    planted_positive: tuple[str, ...] = PLANTED_POSITIVE_DEFAULT
    planted_negative: tuple[str, ...] = PLANTED_NEGATIVE_DEFAULT
    injection_prob: float = 0.8
    lvef_mention_rate: float = 0.3
    code_rate: float = 0.1
    echo_rate: float = 0.2
    noise_token_rate: float = 0.08
    doc_len_min: int = 40
    doc_len_max: int = 80
    structured_missing_rate: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        for name in ("positive_fraction", "injection_prob", "lvef_mention_rate",
                     "code_rate", "echo_rate", "noise_token_rate",
                     "structured_missing_rate"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.n_docs < 1:
            raise ValueError("n_docs must be positive")
        if self.filler_vocab_size < 1 or self.filler_vocab_size > len(FILLER_WORDS):
            raise ValueError("filler_vocab_size out of range")
        if not self.planted_positive or not self.planted_negative:
            raise ValueError("planted n-gram lists must be non-empty")
        if not (1 <= self.doc_len_min <= self.doc_len_max):
            raise ValueError("invalid document length range")

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        for key in ("planted_positive", "planted_negative"):
            if key in raw:
                raw[key] = tuple(raw[key])
        config = cls(**raw)
        config.validate()
        return config


@dataclass
class SynthResult:
    cases: list[LabeledCase]
    true_labels: dict[str, LabelClass]
    echo: list[EchoMeasurement]
    codes: dict[str, list[tuple[CodeSystem, str]]]
    gold_spans: dict[str, dict[str, list[AnnotationSpan]]]
    injected: dict[str, str] = field(default_factory=dict)


class _TextBuilder:
    def __init__(self):
        self.parts: list[str] = []
        self.length = 0

    def append(self, chunk: str) -> None:
        self.parts.append(chunk)
        self.length += len(chunk)

    def append_tracked(self, chunk: str) -> tuple[int, int]:
        start = self.length
        self.append(chunk)
        return start, self.length

    def text(self) -> str:
        return "".join(self.parts)


def _separator(rng: np.random.Generator) -> str:
    roll = rng.random()
    if roll < 0.06:
        return ". "
    if roll < 0.12:
        return ", "
    return " "


def _structured_record(rng: np.random.Generator, positive: bool, missing_rate: float) -> StructuredRecord:
    def maybe_missing(value):
        return None if rng.random() < missing_rate else value

    shift = 0.25 if positive else -0.25
    fields = {
        "age_gt_75": maybe_missing(bool(rng.random() < 0.4)),
        "gender_female": maybe_missing(bool(rng.random() < 0.45)),
        "map_ge_90": maybe_missing(bool(rng.random() < 0.6)),
        "heart_rate_ge_70": maybe_missing(bool(rng.random() < 0.65 + shift * 0.2)),
        "bmi_band": maybe_missing(int(rng.integers(0, 4))),
        "egfr_band": maybe_missing(int(rng.integers(0, 4))),
        "ischaemic_heart_disease": bool(rng.random() < 0.35 + shift),
        "anaemia": bool(rng.random() < 0.15),
        "atrial_fibrillation": bool(rng.random() < 0.3),
        "diabetes": bool(rng.random() < 0.27),
        "hypertension": bool(rng.random() < 0.4 - shift),
        "copd": bool(rng.random() < 0.14),
        "valvular_disease": bool(rng.random() < 0.19),
        "cancer_past_3y": bool(rng.random() < 0.23),
        "device_therapy": bool(rng.random() < 0.15 + shift * 0.5),
        "rasi": bool(rng.random() < 0.5 + shift),
        "beta_blockers": bool(rng.random() < 0.62),
        "mra": bool(rng.random() < 0.33 + shift),
        "digoxin": bool(rng.random() < 0.14),
        "loop_diuretics": bool(rng.random() < 0.63),
    }
    return StructuredRecord(**fields)


def generate(config: SynthConfig) -> SynthResult:
    """Generate a corpus, echo records, per-case codes, and gold spans."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    code_table = load_code_table()
    systolic_codes = [(e.system, e.code) for e in code_table if e.implies.value == "Systolic"]
    diastolic_codes = [(e.system, e.code) for e in code_table if e.implies.value == "Diastolic"]
    filler = FILLER_WORDS[: config.filler_vocab_size]

    cases: list[LabeledCase] = []
    true_labels: dict[str, LabelClass] = {}
    echo_records: list[EchoMeasurement] = []
    codes: dict[str, list[tuple[CodeSystem, str]]] = {}
    gold: dict[str, dict[str, list[AnnotationSpan]]] = {}
    injected: dict[str, str] = {}

    width = len(str(config.n_docs))
    for i in range(config.n_docs):
        doc_id = f"doc-{i:0{width}d}"
        patient_id = f"pat-{i:0{width}d}"
        positive = bool(rng.random() < config.positive_fraction)
        label = LabelClass.HFrEF if positive else LabelClass.HFpEF
        true_labels[doc_id] = label

        admission = BASE_DATE + datetime.timedelta(days=int(rng.integers(0, 365)))
        discharge = admission + datetime.timedelta(days=int(rng.integers(0, 15)))

        planted = config.planted_positive if positive else config.planted_negative
        inject_flags = rng.random(len(planted)) < config.injection_prob
        n_tokens = int(rng.integers(config.doc_len_min, config.doc_len_max + 1))
        insert_at: dict[int, int] = {}
        if inject_flags.any():
            flagged = [j for j, flag in enumerate(inject_flags) if flag][:n_tokens]
            positions = rng.choice(n_tokens, size=len(flagged), replace=False)
            insert_at = dict(zip(positions.tolist(), flagged))

        mention_here: Optional[int] = None
        if rng.random() < config.lvef_mention_rate:
            mention_here = int(rng.integers(0, n_tokens))

        builder = _TextBuilder()
        spans: list[AnnotationSpan] = []
        got_text_injection = False
        for position in range(n_tokens):
            if position > 0:
                builder.append(_separator(rng))
            if position in insert_at:
                ngram = planted[insert_at[position]]
                start, end = builder.append_tracked(ngram)
                tag = SpanTag.Giveaway if insert_at[position] % 2 == 0 else SpanTag.Strong
                spans.append(AnnotationSpan(doc_id=doc_id, start=start, end=end, tag=tag))
                continue
            if mention_here == position:
                trigger = LVEF_TRIGGERS[int(rng.integers(0, len(LVEF_TRIGGERS)))]
                if positive:
                    value = int(rng.integers(15, 40))
                else:
                    value = int(rng.integers(50, 71))
                mention = f"{trigger} {value}"
                start, end = builder.append_tracked(mention)
                spans.append(AnnotationSpan(doc_id=doc_id, start=start, end=end,
                                            tag=SpanTag.Giveaway))
                got_text_injection = True
                continue
            roll = rng.random()
            if roll < config.noise_token_rate / 2:
                builder.append(NUMERIC_NOISE[int(rng.integers(0, len(NUMERIC_NOISE)))])
            elif roll < config.noise_token_rate:
                builder.append(HYPHEN_PAIRS[int(rng.integers(0, len(HYPHEN_PAIRS)))])
            else:
                builder.append(filler[int(rng.integers(0, len(filler)))])
        builder.append(".")
        text = builder.text()

        document = Document(
            id=doc_id, patient_id=patient_id, admission_date=admission,
            discharge_date=discharge, text=text,
            site=Site.A if rng.random() < 0.8 else Site.B,
        )
        structured = _structured_record(rng, positive, config.structured_missing_rate)
        cases.append(LabeledCase(document=document, structured=structured))
        if spans:
            gold[doc_id] = {ANNOTATOR: spans}

        got_code = rng.random() < config.code_rate
        if got_code:
            pool = systolic_codes if positive else diastolic_codes
            codes[doc_id] = [pool[int(rng.integers(0, len(pool)))]]
        got_echo = rng.random() < config.echo_rate
        if got_echo:
            offset = int(rng.integers(-90, (discharge - admission).days + 91))
            method = list(EchoMethod)[int(rng.integers(0, 4))]
            if positive:
                low = float(rng.integers(15, 40))
            else:
                low = float(rng.integers(50, 71))
            high = min(100.0, low + float(rng.integers(0, 9)))
            echo_records.append(EchoMeasurement(
                patient_id=patient_id, date=admission + datetime.timedelta(days=offset),
                method=method, lvef_low=low, lvef_high=high,
            ))
        if got_code:
            injected[doc_id] = "code"
        elif got_echo:
            injected[doc_id] = "echo"
        elif got_text_injection:
            injected[doc_id] = "text"
        else:
            injected[doc_id] = ""

    return SynthResult(cases=cases, true_labels=true_labels, echo=echo_records,
                       codes=codes, gold_spans=gold, injected=injected)


def write_truth(true_labels: dict[str, LabelClass], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(true_labels):
            fh.write(json.dumps({"id": doc_id, "label": true_labels[doc_id].value}) + "\n")


def load_truth(path) -> dict[str, LabelClass]:
    result = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                result[obj["id"]] = LabelClass(obj["label"])
    return result


def write_synth(result: SynthResult, out_dir) -> dict[str, Path]:
    """Write the standard corpus/echo/codes/annotation files plus the
    ground-truth labels."""
    out = ensure_dir(out_dir)
    paths = {
        "corpus": out / "corpus.jsonl",
        "echo": out / "echo.jsonl",
        "codes": out / "diagnosis_codes.jsonl",
        "annotations": out / "annotations.jsonl",
        "truth": out / "truth.jsonl",
    }
    write_corpus(result.cases, paths["corpus"])
    write_echo(result.echo, paths["echo"])
    write_diagnosis_codes(result.codes, paths["codes"])
    write_annotations(result.gold_spans, paths["annotations"])
    write_truth(result.true_labels, paths["truth"])
    return paths
