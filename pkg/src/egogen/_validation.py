"""Small input checks shared by the estimator wrappers and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ValidationError


def check_points(X, name: str = "points", allow_empty: bool = False) -> np.ndarray:
    """Finite float64 array of shape ``(n, 3)``."""
    try:
        X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=0 if allow_empty else 1)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from None
    if X.shape[1] != 3:
        raise ValidationError(f"{name}: expected 3 columns, got {X.shape[1]}")
    return X


def check_positive(value, name: str, integer: bool = False):
    if integer:
        if int(value) != value or value < 1:
            raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        return int(value)
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")
    return value
