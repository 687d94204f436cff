"""Core data types and file I/O for discharge-letter corpora.

All records are exchanged as line-delimited JSON with snake_case keys and
ISO-8601 calendar dates.  Character offsets throughout are Unicode scalar
offsets into the document text, never bytes.  Every type is immutable after
construction and safe to share across workers.

File formats:
    corpus.jsonl      {id, patient_id, admission_date, discharge_date, text,
                       site, label?, source?, structured?}
    echo.jsonl        {patient_id, date, method, lvef_low, lvef_high}
    annotations.jsonl {doc_id, annotator, start, end, tag}
    diagnosis_codes.jsonl {id, system, code}
    silver_labels.jsonl   {id, label, source}
    codes.csv         system,code,implies  (packaged lookup table)
"""

from __future__ import annotations

import csv
import datetime
import json
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator


class Site(str, Enum):
    """Hospital site: A is the training site, B the external-validation site."""

    A = "A"
    B = "B"


class LabelClass(str, Enum):
    HFrEF = "HFrEF"
    HFpEF = "HFpEF"
    Unspecified = "Unspecified"


class LabelSource(str, Enum):
    Gold = "gold"
    Code = "code"
    Echo = "echo"
    Text = "text"
    Nothing = "none"


class EchoMethod(str, Enum):
    """LVEF estimation methods, from most to least reliable."""

    Volumetric3D4D = "3d4d"
    Biplane = "biplane"
    SinglePlane = "single_plane"
    Teichholz = "teichholz"


class SpanTag(str, Enum):
    Giveaway = "giveaway"
    Strong = "strong"
    Opposite = "opposite"


class CodeSystem(str, Enum):
    ICD10CM = "ICD10CM"
    SNOMEDCT = "SNOMEDCT"


class CodeImplies(str, Enum):
    Systolic = "Systolic"
    Diastolic = "Diastolic"


#: Ordinal values for the four EGFR / BMI bands, lowest band first.
ORDINAL_BANDS = (0, 1, 2, 3)

#: Covariates that may be missing and are filled in by the imputer.
NULLABLE_FIELDS = (
    "age_gt_75",
    "gender_female",
    "map_ge_90",
    "heart_rate_ge_70",
    "bmi_band",
    "egfr_band",
)

#: Comorbidity and medication covariates; absence of a code means False,
#: so these are never null.
BOOLEAN_FIELDS = (
    "ischaemic_heart_disease",
    "anaemia",
    "atrial_fibrillation",
    "diabetes",
    "hypertension",
    "copd",
    "valvular_disease",
    "cancer_past_3y",
    "device_therapy",
    "rasi",
    "beta_blockers",
    "mra",
    "digoxin",
    "loop_diuretics",
)

#: All covariate names in canonical column order.
STRUCTURED_FIELDS = NULLABLE_FIELDS + BOOLEAN_FIELDS


class StructuredRecord(BaseModel):
    """The 20 structured covariates of one hospitalization.

    Demographic/vital/lab covariates may individually be missing (None);
    comorbidity and medication flags are always present.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    age_gt_75: Optional[bool] = None
    gender_female: Optional[bool] = None
    map_ge_90: Optional[bool] = None
    heart_rate_ge_70: Optional[bool] = None
    bmi_band: Optional[int] = None
    egfr_band: Optional[int] = None

    ischaemic_heart_disease: bool
    anaemia: bool
    atrial_fibrillation: bool
    diabetes: bool
    hypertension: bool
    copd: bool
    valvular_disease: bool
    cancer_past_3y: bool
    device_therapy: bool
    rasi: bool
    beta_blockers: bool
    mra: bool
    digoxin: bool
    loop_diuretics: bool

    @model_validator(mode="after")
    def _check_bands(self) -> "StructuredRecord":
        for field in ("bmi_band", "egfr_band"):
            value = getattr(self, field)
            if value is not None and value not in ORDINAL_BANDS:
                raise ValueError(f"{field} must be one of {ORDINAL_BANDS}, got {value}")
        return self

    def as_row(self) -> list:
        """Covariates as a list in STRUCTURED_FIELDS order; None for missing."""
        row = []
        for field in STRUCTURED_FIELDS:
            value = getattr(self, field)
            row.append(None if value is None else float(value))
        return row


class Document(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    patient_id: str
    admission_date: datetime.date
    discharge_date: datetime.date
    text: str
    site: Site

    @model_validator(mode="after")
    def _check(self) -> "Document":
        if self.admission_date > self.discharge_date:
            raise ValueError("discharge_date precedes admission_date")
        if not self.text:
            raise ValueError("text must be non-empty")
        return self


class LabeledCase(BaseModel):
    """One hospitalization with its (possibly absent) label and provenance."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    document: Document
    label: LabelClass = LabelClass.Unspecified
    source: LabelSource = LabelSource.Nothing
    structured: Optional[StructuredRecord] = None

    @model_validator(mode="after")
    def _check(self) -> "LabeledCase":
        if (self.source is LabelSource.Nothing) != (self.label is LabelClass.Unspecified):
            raise ValueError("source must be 'none' exactly when label is Unspecified")
        return self


class EchoMeasurement(BaseModel):
    """A dated LVEF estimate; point values have lvef_low == lvef_high."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    patient_id: str
    date: datetime.date
    method: EchoMethod
    lvef_low: float
    lvef_high: float

    @model_validator(mode="after")
    def _check(self) -> "EchoMeasurement":
        if not (0.0 <= self.lvef_low <= self.lvef_high <= 100.0):
            raise ValueError("need 0 <= lvef_low <= lvef_high <= 100")
        return self


class AnnotationSpan(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    doc_id: str
    start: int
    end: int
    tag: SpanTag

    @model_validator(mode="after")
    def _check(self) -> "AnnotationSpan":
        if not (0 <= self.start < self.end):
            raise ValueError("need 0 <= start < end")
        return self


class CodeEntry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    system: CodeSystem
    code: str
    implies: CodeImplies


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus files."""


def _iter_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _validation_detail(exc: ValidationError) -> str:
    first = exc.errors()[0]
    field = ".".join(str(p) for p in first["loc"]) or "<record>"
    return f"field '{field}': {first['msg']}"


def load_corpus(path) -> list[LabeledCase]:
    """Load corpus.jsonl into validated cases, sorted by document id.

    Raises CorpusError naming the offending line and field for malformed
    records, and for duplicate document ids.
    """
    cases: dict[str, LabeledCase] = {}
    for lineno, obj in _iter_jsonl(path):
        doc_fields = {k: obj.get(k) for k in
                      ("id", "patient_id", "admission_date", "discharge_date", "text", "site")}
        try:
            document = Document(**doc_fields)
            structured = obj.get("structured")
            case = LabeledCase(
                document=document,
                label=obj.get("label", LabelClass.Unspecified),
                source=obj.get("source", LabelSource.Nothing),
                structured=None if structured is None else StructuredRecord(**structured),
            )
        except ValidationError as exc:
            raise CorpusError(f"{path}:{lineno}: {_validation_detail(exc)}") from exc
        if case.document.id in cases:
            raise CorpusError(f"{path}:{lineno}: duplicate document id '{case.document.id}'")
        cases[case.document.id] = case
    return [cases[k] for k in sorted(cases)]


def write_corpus(cases: Iterable[LabeledCase], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            obj = {
                "id": case.document.id,
                "patient_id": case.document.patient_id,
                "admission_date": case.document.admission_date.isoformat(),
                "discharge_date": case.document.discharge_date.isoformat(),
                "text": case.document.text,
                "site": case.document.site.value,
            }
            if case.label is not LabelClass.Unspecified:
                obj["label"] = case.label.value
                obj["source"] = case.source.value
            if case.structured is not None:
                obj["structured"] = case.structured.model_dump()
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_echo(path) -> list[EchoMeasurement]:
    measurements = []
    for lineno, obj in _iter_jsonl(path):
        try:
            measurements.append(EchoMeasurement(**obj))
        except ValidationError as exc:
            raise CorpusError(f"{path}:{lineno}: {_validation_detail(exc)}") from exc
    return measurements


def write_echo(measurements: Iterable[EchoMeasurement], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in measurements:
            obj = m.model_dump()
            obj["date"] = m.date.isoformat()
            obj["method"] = m.method.value
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_annotations(path, documents: dict[str, Document]) -> dict[str, dict[str, list[AnnotationSpan]]]:
    """Load annotations.jsonl as doc_id -> annotator -> spans.

    Spans are validated against document lengths; within one annotator's set
    spans on the same document must not overlap.
    """
    result: dict[str, dict[str, list[AnnotationSpan]]] = {}
    for lineno, obj in _iter_jsonl(path):
        annotator = obj.get("annotator")
        if not isinstance(annotator, str) or not annotator:
            raise CorpusError(f"{path}:{lineno}: field 'annotator': missing or empty")
        try:
            span = AnnotationSpan(**{k: obj.get(k) for k in ("doc_id", "start", "end", "tag")})
        except ValidationError as exc:
            raise CorpusError(f"{path}:{lineno}: {_validation_detail(exc)}") from exc
        doc = documents.get(span.doc_id)
        if doc is None:
            raise CorpusError(f"{path}:{lineno}: unknown doc_id '{span.doc_id}'")
        if span.end > len(doc.text):
            raise CorpusError(
                f"{path}:{lineno}: span end {span.end} beyond text length {len(doc.text)}"
            )
        result.setdefault(span.doc_id, {}).setdefault(annotator, []).append(span)
    for doc_id, by_annotator in result.items():
        for annotator, spans in by_annotator.items():
            spans.sort(key=lambda s: (s.start, s.end))
            for a, b in zip(spans, spans[1:]):
                if b.start < a.end:
                    raise CorpusError(
                        f"overlapping spans for annotator '{annotator}' on doc '{doc_id}': "
                        f"[{a.start},{a.end}) and [{b.start},{b.end})"
                    )
    return result


def write_annotations(spans_by_annotator: dict[str, dict[str, list[AnnotationSpan]]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(spans_by_annotator):
            for annotator in sorted(spans_by_annotator[doc_id]):
                for span in spans_by_annotator[doc_id][annotator]:
                    obj = {"doc_id": span.doc_id, "annotator": annotator,
                           "start": span.start, "end": span.end, "tag": span.tag.value}
                    fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_diagnosis_codes(path) -> dict[str, list[tuple[CodeSystem, str]]]:
    """Load diagnosis_codes.jsonl as doc_id -> list of (system, code)."""
    result: dict[str, list[tuple[CodeSystem, str]]] = {}
    for lineno, obj in _iter_jsonl(path):
        doc_id = obj.get("id")
        if not isinstance(doc_id, str) or not doc_id:
            raise CorpusError(f"{path}:{lineno}: field 'id': missing or empty")
        try:
            system = CodeSystem(obj.get("system"))
        except ValueError as exc:
            raise CorpusError(f"{path}:{lineno}: field 'system': unknown value") from exc
        code = obj.get("code")
        if not isinstance(code, str) or not code:
            raise CorpusError(f"{path}:{lineno}: field 'code': missing or empty")
        result.setdefault(doc_id, []).append((system, code))
    return result


def write_diagnosis_codes(codes: dict[str, list[tuple[CodeSystem, str]]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(codes):
            for system, code in codes[doc_id]:
                fh.write(json.dumps({"id": doc_id, "system": system.value, "code": code}) + "\n")


def load_code_table(path=None) -> list[CodeEntry]:
    """Load the diagnosis-code lookup table; defaults to the packaged list."""
    if path is None:
        ref = resources.files("hfpheno.data").joinpath("codes.csv")
        with resources.as_file(ref) as p:
            return load_code_table(p)
    entries = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            entries.append(CodeEntry(system=row["system"], code=row["code"], implies=row["implies"]))
    seen = set()
    for entry in entries:
        key = (entry.system, entry.code)
        if key in seen:
            raise CorpusError(f"duplicate code {entry.code} for system {entry.system.value}")
        seen.add(key)
    return entries


def write_silver_labels(rows: Iterable[tuple[str, LabelClass, LabelSource]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, label, source in rows:
            fh.write(json.dumps({"id": doc_id, "label": label.value, "source": source.value}) + "\n")


def load_silver_labels(path) -> dict[str, tuple[LabelClass, LabelSource]]:
    result = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            result[obj["id"]] = (LabelClass(obj["label"]), LabelSource(obj["source"]))
        except (KeyError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: malformed silver label record") from exc
    return result


def stopwords_nl() -> frozenset[str]:
    """Packaged Dutch stop-word list used by the TF-IDF baseline."""
    ref = resources.files("hfpheno.data").joinpath("stopwords_nl.txt")
    words = ref.read_text(encoding="utf-8").split()
    return frozenset(words)


def sha256_file(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
