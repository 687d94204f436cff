"""Chained-regression imputation and standardization for the structured
covariates.

Missing entries are initialized at the training means and then refined for
a fixed number of sweeps, each sweep regressing one nullable variable on
all the others with ordinary least squares.  The fitted object freezes the
training-fold statistics: transform never recomputes anything.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .._validation import check_is_fitted
from ..corpus import NULLABLE_FIELDS, ORDINAL_BANDS, STRUCTURED_FIELDS

#: Column indices of covariates that may be missing.
NULLABLE_COLUMNS = tuple(range(len(NULLABLE_FIELDS)))

#: Valid values per nullable column, used to round imputed values back
#: onto the covariate's scale.
_VALID_VALUES = {
    col: (0.0, 1.0) if NULLABLE_FIELDS[col] not in ("bmi_band", "egfr_band")
    else tuple(float(b) for b in ORDINAL_BANDS)
    for col in NULLABLE_COLUMNS
}

#: Columns standardized after imputation (the numeric bands).
_STANDARDIZED = tuple(
    i for i, name in enumerate(STRUCTURED_FIELDS) if name in ("bmi_band", "egfr_band")
)


def rows_to_matrix(rows: Sequence[Sequence]) -> np.ndarray:
    """Stack covariate rows into a float matrix with NaN for missing."""
    X = np.full((len(rows), len(STRUCTURED_FIELDS)), np.nan)
    for i, row in enumerate(rows):
        if len(row) != len(STRUCTURED_FIELDS):
            raise ValueError(
                f"row {i} has {len(row)} covariates, expected {len(STRUCTURED_FIELDS)}"
            )
        for j, value in enumerate(row):
            if value is not None:
                X[i, j] = float(value)
    return X


def _round_to_valid(values: np.ndarray, valid: tuple[float, ...]) -> np.ndarray:
    grid = np.asarray(valid)
    idx = np.argmin(np.abs(values[:, None] - grid[None, :]), axis=1)
    return grid[idx]


class ChainedImputer(BaseEstimator, TransformerMixin):
    """Fit chained OLS imputation models plus band standardization."""

    def __init__(self, n_iter: int = 10):
        self.n_iter = n_iter
        self.means_: np.ndarray | None = None
        self.models_: dict[int, tuple[np.ndarray, float]] | None = None
        self.band_means_: np.ndarray | None = None
        self.band_scales_: np.ndarray | None = None

    def fit(self, rows: Sequence[Sequence]) -> "ChainedImputer":
        X = rows_to_matrix(rows)
        observed = ~np.isnan(X)
        for col in NULLABLE_COLUMNS:
            if observed[:, col].sum() < 2:
                raise ValueError(
                    f"covariate '{STRUCTURED_FIELDS[col]}' has fewer than 2 observed "
                    "training values"
                )
        if not observed[:, len(NULLABLE_COLUMNS):].all():
            raise ValueError("comorbidity/medication covariates must never be missing")
        means = np.nanmean(X, axis=0)
        filled = np.where(observed, X, means)

        models: dict[int, tuple[np.ndarray, float]] = {}
        for _ in range(self.n_iter):
            for col in NULLABLE_COLUMNS:
                mask = observed[:, col]
                others = np.delete(filled, col, axis=1)
                design = np.column_stack([others[mask], np.ones(mask.sum())])
                target = X[mask, col]
                coef, *_ = np.linalg.lstsq(design, target, rcond=None)
                models[col] = (coef[:-1], float(coef[-1]))
                missing = ~mask
                if missing.any():
                    pred = np.delete(filled, col, axis=1)[missing] @ coef[:-1] + coef[-1]
                    filled[missing, col] = pred

        self.means_ = means
        self.models_ = models
        # Standardization statistics for the band columns, from the imputed
        # (pre-rounding) training matrix.
        band = filled[:, list(_STANDARDIZED)]
        self.band_means_ = band.mean(axis=0)
        scales = band.std(axis=0)
        scales[scales == 0.0] = 1.0
        self.band_scales_ = scales
        return self

    def transform(self, rows: Sequence[Sequence]) -> np.ndarray:
        check_is_fitted(self, "models_")
        X = rows_to_matrix(rows)
        observed = ~np.isnan(X)
        filled = np.where(observed, X, self.means_)
        for _ in range(self.n_iter):
            for col in NULLABLE_COLUMNS:
                missing = ~observed[:, col]
                if not missing.any():
                    continue
                coef, intercept = self.models_[col]
                pred = np.delete(filled, col, axis=1)[missing] @ coef + intercept
                filled[missing, col] = pred
        for col in NULLABLE_COLUMNS:
            missing = ~observed[:, col]
            if missing.any():
                filled[missing, col] = _round_to_valid(filled[missing, col], _VALID_VALUES[col])
        for k, col in enumerate(_STANDARDIZED):
            filled[:, col] = (filled[:, col] - self.band_means_[k]) / self.band_scales_[k]
        return filled

    def fit_transform(self, rows: Sequence[Sequence], y=None) -> np.ndarray:
        return self.fit(rows).transform(rows)

    def spec(self) -> dict:
        """Frozen statistics, serializable into the model artifact."""
        check_is_fitted(self, "models_")
        return {
            "n_iter": self.n_iter,
            "means": self.means_.tolist(),
            "models": {
                str(col): {"coef": coef.tolist(), "intercept": intercept}
                for col, (coef, intercept) in self.models_.items()
            },
            "band_means": self.band_means_.tolist(),
            "band_scales": self.band_scales_.tolist(),
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "ChainedImputer":
        imputer = cls(n_iter=spec["n_iter"])
        imputer.means_ = np.asarray(spec["means"], dtype=np.float64)
        imputer.models_ = {
            int(col): (np.asarray(m["coef"], dtype=np.float64), float(m["intercept"]))
            for col, m in spec["models"].items()
        }
        imputer.band_means_ = np.asarray(spec["band_means"], dtype=np.float64)
        imputer.band_scales_ = np.asarray(spec["band_scales"], dtype=np.float64)
        return imputer
