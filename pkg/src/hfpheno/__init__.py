"""hfpheno: phenotyping heart-failure discharge letters.

Rule-based silver labels from diagnosis codes, echo measurements, and LVEF
text statements; interpretable classifiers over n-gram embeddings; post-hoc
explainers; and the agreement metrics to evaluate explanations against
human annotations.
"""

__version__ = "0.1.0"

from .corpus import (
    AnnotationSpan,
    Document,
    EchoMeasurement,
    LabelClass,
    LabeledCase,
    StructuredRecord,
    load_corpus,
)
from .labeling import assign_silver_label, extract_lvef_mentions, mask_lvef
from .models import AugLinearClassifier, CyclicGamClassifier, NewtonLogisticRegression
from .text import TokenSeq, build_vocabulary, normalize

__all__ = [
    "AnnotationSpan",
    "AugLinearClassifier",
    "CyclicGamClassifier",
    "Document",
    "EchoMeasurement",
    "LabelClass",
    "LabeledCase",
    "NewtonLogisticRegression",
    "StructuredRecord",
    "TokenSeq",
    "__version__",
    "assign_silver_label",
    "build_vocabulary",
    "extract_lvef_mentions",
    "load_corpus",
    "mask_lvef",
    "normalize",
]
