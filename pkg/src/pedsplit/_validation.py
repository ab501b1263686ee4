"""Input validation helpers shared by the numeric modules."""

from __future__ import annotations

import numpy as np

from .exceptions import ProbabilityOutOfRange, ShapeMismatch, ValidationError


def check_binary_matrix(a, name: str = "array") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got {a.ndim} dimensions")
    if a.dtype == bool:
        return a.astype(np.int64)
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValidationError(f"{name} must contain only 0 and 1")
    return a.astype(np.int64)


def check_probability_matrix(p, name: str = "probabilities") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    if p.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got {p.ndim} dimensions")
    if not np.isfinite(p).all():
        raise ProbabilityOutOfRange(f"{name} contain non-finite values")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        bad = p[(p < 0.0) | (p > 1.0)]
        raise ProbabilityOutOfRange(f"{name} must lie in [0, 1], found {bad[0]!r}")
    return p


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("predictions", "labels")) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")
