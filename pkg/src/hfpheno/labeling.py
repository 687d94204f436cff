"""Rule-based silver labeling of LVEF classes.

Three sources are tried in fixed precedence order: diagnosis codes, then
echocardiography measurements, then explicit LVEF statements in the letter
text.  Reduced ejection fraction (< 40) always wins over preserved (>= 50)
within a source.  The module also masks LVEF expressions for training and
provides the two label-quality audits (missingness and distribution
divergence).
"""

from __future__ import annotations

import datetime
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import (
    CodeEntry,
    CodeImplies,
    CodeSystem,
    Document,
    EchoMeasurement,
    EchoMethod,
    LabelClass,
    LabelSource,
    StructuredRecord,
    load_code_table,
)

# Numeric LVEF statements: a trigger keyword followed by a value or range.
# The second bound of a range may be an integer or a decimal, matching the
# first bound's grammar.
LVEF_PATTERN = re.compile(
    r"(?:ejection fraction|ejectiefractie|(lv)?ef):?\s*"
    r"((?:100|\d{1,2})(?:\.\d+)?(?:\s*-\s*(?:100|\d{1,2})(?:\.\d+)?)?)",
    re.IGNORECASE,
)

SYSTOLIC_CUE = re.compile(r"(?:systolic|systolische)\s+(?:dysfunction|dysfunctie)", re.IGNORECASE)
DIASTOLIC_CUE = re.compile(r"(?:diastolic|diastolische)\s+(?:dysfunction|dysfunctie)", re.IGNORECASE)

#: Negation cues that cancel a dysfunction mention when they appear within
#: the three whitespace tokens preceding it.
NEGATION_CUES = frozenset({"geen", "niet", "zonder"})
NEGATION_WINDOW = 3

MASK_TOKEN = "EFMASK"

#: LVEF class thresholds: below REDUCED_BELOW is reduced, at or above
#: PRESERVED_AT_OR_ABOVE is preserved, in between no label is assigned.
REDUCED_BELOW = 40.0
PRESERVED_AT_OR_ABOVE = 50.0

#: Echo range estimates wider than this are unreliable and discarded.
MAX_ECHO_RANGE = 10.0

ECHO_METHOD_PRIORITY = {
    EchoMethod.Volumetric3D4D: 0,
    EchoMethod.Biplane: 1,
    EchoMethod.SinglePlane: 2,
    EchoMethod.Teichholz: 3,
}

ECHO_WINDOW_DAYS = 90


class MentionKind(str, Enum):
    Numeric = "numeric"
    SystolicDysfunction = "systolic_dysfunction"
    DiastolicDysfunction = "diastolic_dysfunction"


@dataclass(frozen=True)
class LvefMention:
    start: int
    end: int
    kind: MentionKind
    value_low: Optional[float] = None
    value_high: Optional[float] = None


@dataclass(frozen=True)
class SilverLabel:
    label: LabelClass
    source: LabelSource


@dataclass(frozen=True)
class CodeLabelResult:
    label: Optional[LabelClass]
    conflict: bool


def _is_negated(text: str, cue_start: int) -> bool:
    preceding = text[:cue_start].split()
    for raw in preceding[-NEGATION_WINDOW:]:
        word = raw.strip(".,;:()!?").lower()
        if word in NEGATION_CUES:
            return True
    return False


def extract_lvef_mentions(text: str) -> list[LvefMention]:
    """Find numeric LVEF statements and unnegated dysfunction cues.

    Numeric values come from the trigger-keyword expression; single values
    yield value_low == value_high.  Dysfunction cues are dropped when a
    negation cue occurs within the three preceding whitespace tokens.
    """
    mentions: list[LvefMention] = []
    for match in LVEF_PATTERN.finditer(text):
        raw = match.group(2)
        parts = [p.strip() for p in raw.split("-")]
        low = float(parts[0])
        high = float(parts[1]) if len(parts) == 2 and parts[1] else low
        if low > high:
            low, high = high, low
        mentions.append(
            LvefMention(start=match.start(), end=match.end(), kind=MentionKind.Numeric,
                        value_low=low, value_high=high)
        )
    for pattern, kind in ((SYSTOLIC_CUE, MentionKind.SystolicDysfunction),
                          (DIASTOLIC_CUE, MentionKind.DiastolicDysfunction)):
        for match in pattern.finditer(text):
            if not _is_negated(text, match.start()):
                mentions.append(LvefMention(start=match.start(), end=match.end(), kind=kind))
    mentions.sort(key=lambda m: (m.start, m.end))
    return mentions


def label_from_codes(
    codes: Iterable[tuple[CodeSystem, str]],
    code_table: Optional[Sequence[CodeEntry]] = None,
) -> CodeLabelResult:
    """Label from diagnosis codes; contradictory codes abstain with a flag."""
    if code_table is None:
        code_table = load_code_table()
    lookup = {(entry.system, entry.code): entry.implies for entry in code_table}
    systolic = diastolic = False
    for system, code in codes:
        implies = lookup.get((CodeSystem(system), code))
        if implies is CodeImplies.Systolic:
            systolic = True
        elif implies is CodeImplies.Diastolic:
            diastolic = True
    if systolic and diastolic:
        return CodeLabelResult(label=None, conflict=True)
    if systolic:
        return CodeLabelResult(label=LabelClass.HFrEF, conflict=False)
    if diastolic:
        return CodeLabelResult(label=LabelClass.HFpEF, conflict=False)
    return CodeLabelResult(label=None, conflict=False)


def select_echo_lvef(measurements: Sequence[EchoMeasurement]) -> Optional[float]:
    """Pick the single LVEF value for one examination date.

    Ranges wider than 10 points are discarded; among survivors the most
    reliable method wins and the lower bound of its range is returned.
    Ties on method resolve to the lowest bound (reduced-first convention).
    """
    survivors = [m for m in measurements if (m.lvef_high - m.lvef_low) <= MAX_ECHO_RANGE]
    if not survivors:
        return None
    best = min(survivors, key=lambda m: (ECHO_METHOD_PRIORITY[m.method], m.lvef_low))
    return best.lvef_low


def _values_to_label(values: Iterable[float]) -> tuple[Optional[LabelClass], bool]:
    """Apply the reduced-first thresholds; second element flags an exact 50."""
    values = list(values)
    if any(v < REDUCED_BELOW for v in values):
        return LabelClass.HFrEF, False
    preserved = [v for v in values if v >= PRESERVED_AT_OR_ABOVE]
    if preserved:
        return LabelClass.HFpEF, any(v == PRESERVED_AT_OR_ABOVE for v in preserved)
    return None, False


def echo_values_in_window(case: Document, echos: Iterable[EchoMeasurement]) -> list[float]:
    """Per-date selected LVEFs within 90 days of the hospitalization."""
    window_start = case.admission_date - datetime.timedelta(days=ECHO_WINDOW_DAYS)
    window_end = case.discharge_date + datetime.timedelta(days=ECHO_WINDOW_DAYS)
    by_date: dict[datetime.date, list[EchoMeasurement]] = {}
    for echo in echos:
        if window_start <= echo.date <= window_end:
            by_date.setdefault(echo.date, []).append(echo)
    values = []
    for date in sorted(by_date):
        selected = select_echo_lvef(by_date[date])
        if selected is not None:
            values.append(selected)
    return values


def label_from_echo(case: Document, echos: Iterable[EchoMeasurement]) -> Optional[LabelClass]:
    label, _ = _values_to_label(echo_values_in_window(case, echos))
    return label


def label_from_text(text: str) -> Optional[LabelClass]:
    """Label from explicit LVEF statements in the letter.

    Numeric mentions decide with the echo thresholds on their lower bound;
    only if no numeric decision exists do unnegated dysfunction cues apply.
    """
    mentions = extract_lvef_mentions(text)
    numeric = [m.value_low for m in mentions if m.kind is MentionKind.Numeric]
    label, _ = _values_to_label(numeric)
    if label is not None:
        return label
    kinds = {m.kind for m in mentions}
    if MentionKind.SystolicDysfunction in kinds:
        return LabelClass.HFrEF
    if MentionKind.DiastolicDysfunction in kinds:
        return LabelClass.HFpEF
    return None


def assign_silver_label(
    case: Document,
    codes: Iterable[tuple[CodeSystem, str]],
    echos: Iterable[EchoMeasurement],
    code_table: Optional[Sequence[CodeEntry]] = None,
) -> Optional[SilverLabel]:
    """First non-abstaining stage of codes, echo, text."""
    code_result = label_from_codes(codes, code_table)
    if code_result.label is not None:
        return SilverLabel(label=code_result.label, source=LabelSource.Code)
    echo_label = label_from_echo(case, echos)
    if echo_label is not None:
        return SilverLabel(label=echo_label, source=LabelSource.Echo)
    text_label = label_from_text(case.text)
    if text_label is not None:
        return SilverLabel(label=text_label, source=LabelSource.Text)
    return None


def mask_lvef(text: str) -> str:
    """Replace every numeric LVEF statement and unnegated dysfunction cue
    with the fixed token EFMASK.  Idempotent; all other characters kept."""
    spans = [(m.start, m.end) for m in extract_lvef_mentions(text)]
    if not spans:
        return text
    merged: list[list[int]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    out = []
    cursor = 0
    for start, end in merged:
        out.append(text[cursor:start])
        out.append(MASK_TOKEN)
        cursor = end
    out.append(text[cursor:])
    return "".join(out)


@dataclass
class LabelingSummary:
    """Tallies reported by the `label` CLI subcommand."""

    by_source: dict[str, int]
    by_class: dict[str, int]
    unlabeled: int
    code_conflicts: int
    boundary_50: int

    def as_table(self) -> str:
        lines = ["category\tkey\tcount"]
        for source, n in sorted(self.by_source.items()):
            lines.append(f"source\t{source}\t{n}")
        for cls, n in sorted(self.by_class.items()):
            lines.append(f"class\t{cls}\t{n}")
        lines.append(f"unlabeled\t-\t{self.unlabeled}")
        lines.append(f"code_conflicts\t-\t{self.code_conflicts}")
        lines.append(f"boundary_50\t-\t{self.boundary_50}")
        return "\n".join(lines) + "\n"


def label_corpus(
    documents: Sequence[Document],
    codes_by_doc: Mapping[str, list[tuple[CodeSystem, str]]],
    echos_by_patient: Mapping[str, list[EchoMeasurement]],
    code_table: Optional[Sequence[CodeEntry]] = None,
) -> tuple[list[tuple[str, LabelClass, LabelSource]], LabelingSummary]:
    """Run the full precedence over a corpus and collect summary tallies.

    Boundary cases (a preserved label decided by a value of exactly 50)
    are counted because the preserved cutoff is ambiguous at 50.
    """
    if code_table is None:
        code_table = load_code_table()
    rows: list[tuple[str, LabelClass, LabelSource]] = []
    by_source: dict[str, int] = {}
    by_class: dict[str, int] = {}
    unlabeled = conflicts = boundary = 0
    for doc in documents:
        codes = codes_by_doc.get(doc.id, [])
        echos = echos_by_patient.get(doc.patient_id, [])
        code_result = label_from_codes(codes, code_table)
        if code_result.conflict:
            conflicts += 1
        silver = assign_silver_label(doc, codes, echos, code_table)
        if silver is None:
            unlabeled += 1
            continue
        if silver.source is LabelSource.Echo:
            _, at_50 = _values_to_label(echo_values_in_window(doc, echos))
            boundary += at_50
        elif silver.source is LabelSource.Text:
            numeric = [m.value_low for m in extract_lvef_mentions(doc.text)
                       if m.kind is MentionKind.Numeric]
            _, at_50 = _values_to_label(numeric)
            boundary += at_50
        rows.append((doc.id, silver.label, silver.source))
        by_source[silver.source.value] = by_source.get(silver.source.value, 0) + 1
        by_class[silver.label.value] = by_class.get(silver.label.value, 0) + 1
    summary = LabelingSummary(by_source=by_source, by_class=by_class, unlabeled=unlabeled,
                              code_conflicts=conflicts, boundary_50=boundary)
    return rows, summary


def missingness_audit(
    records: Sequence[tuple[StructuredRecord, bool]],
    folds: int = 5,
    seed: int = 0,
) -> float:
    """Cross-validated AUC of a logistic model predicting label presence
    from the structured covariates.  An AUC near 0.5 is compatible with
    labels missing completely at random."""
    from .evaluation import roc_auc, stratified_folds
    from .models.impute import ChainedImputer
    from .models.linear import NewtonLogisticRegression

    has_label = np.array([1.0 if flag else 0.0 for _, flag in records])
    if np.unique(has_label).size < 2:
        raise ValueError("missingness audit needs records of both label statuses")
    rows = [record.as_row() for record, _ in records]
    plan = stratified_folds(has_label, folds, seed)
    assignments = np.array([plan.assignments[str(i)] for i in range(len(records))])
    pooled_scores = np.empty(len(records))
    for fold in range(folds):
        train_idx = np.flatnonzero(assignments != fold)
        test_idx = np.flatnonzero(assignments == fold)
        imputer = ChainedImputer().fit([rows[i] for i in train_idx])
        X_train = imputer.transform([rows[i] for i in train_idx])
        X_test = imputer.transform([rows[i] for i in test_idx])
        model = NewtonLogisticRegression(reg_c=1.0, seed=seed).fit(X_train, has_label[train_idx])
        pooled_scores[test_idx] = model.predict_proba(X_test)
    return roc_auc(pooled_scores, has_label)


def label_distribution_divergence(
    counts: Mapping[str, float], reference: Mapping[str, float]
) -> float:
    """Jensen-Shannon divergence (base-2) between observed class counts and
    a reference distribution over the same classes.  Bounded by 1."""
    if set(counts) != set(reference):
        raise ValueError("counts and reference must cover the same classes")
    total = float(sum(counts.values()))
    if total <= 0:
        raise ValueError("counts must have a positive total")
    ref_total = float(sum(reference.values()))
    if not math.isclose(ref_total, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError("reference proportions must sum to 1")
    classes = sorted(counts)
    p = np.array([counts[c] / total for c in classes])
    q = np.array([reference[c] for c in classes])
    m = 0.5 * (p + q)

    def kl(a: np.ndarray, b: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)
