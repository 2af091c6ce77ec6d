"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def as_1d(x, name: str, min_samples: int = 1) -> np.ndarray:
    """Finite float vector; column vectors of shape (n, 1) are flattened."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    try:
        arr = check_array(arr, ensure_2d=False, dtype=float, ensure_min_samples=min_samples,
                          input_name=name)
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from None
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def paired(x, y, x_name: str, y_name: str, min_samples: int = 1):
    a = as_1d(x, x_name, min_samples)
    b = as_1d(y, y_name, min_samples)
    check_consistent_length(a, b)
    return a, b


def positive(value, name: str) -> float:
    v = float(value)
    if not np.isfinite(v) or v <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return v
