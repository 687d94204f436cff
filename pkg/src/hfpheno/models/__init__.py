from .auglinear import AugLinearClassifier, doc_vector
from .ebm import CyclicGamClassifier
from .impute import ChainedImputer
from .linear import NewtonLogisticRegression, logistic

__all__ = [
    "AugLinearClassifier",
    "ChainedImputer",
    "CyclicGamClassifier",
    "NewtonLogisticRegression",
    "doc_vector",
    "logistic",
]
