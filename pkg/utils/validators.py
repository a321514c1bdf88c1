"""
Input validation utilities.

Validators return ``(is_valid, error_message)``; ``ensure`` turns a failed
check into a ``ValidationError`` for callers that must not continue.
"""
import math
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils.errors import ValidationError

Check = Tuple[bool, Optional[str]]


def ensure(check: Check, error_cls=ValidationError) -> None:
    """Raise ``error_cls`` with the validator's message if the check failed."""
    is_valid, message = check
    if not is_valid:
        raise error_cls(message)


def validate_positive(name: str, value) -> Check:
    """Value must be a finite real strictly greater than zero."""
    try:
        value = float(value)
    except (TypeError, ValueError):
        return False, f"{name} must be a number."
    if not math.isfinite(value):
        return False, f"{name} must be finite."
    if value <= 0:
        return False, f"{name} must be positive (got {value})."
    return True, None


def validate_nonnegative(name: str, value) -> Check:
    try:
        value = float(value)
    except (TypeError, ValueError):
        return False, f"{name} must be a number."
    if not math.isfinite(value) or value < 0:
        return False, f"{name} must be a finite nonnegative number (got {value})."
    return True, None


def validate_min_int(name: str, value, minimum: int) -> Check:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        return False, f"{name} must be an integer."
    if value < minimum:
        return False, f"{name} must be at least {minimum} (got {value})."
    return True, None


def validate_points(points: np.ndarray) -> Check:
    """
    Validate a support-point matrix.

    Rules:
    - 2-D array of shape (n, d) with n >= 1 and d >= 1
    - all coordinates finite
    """
    if points.ndim != 2:
        return False, f"Points must be a 2-D (n, d) array, got {points.ndim} dimension(s)."
    n, d = points.shape
    if n < 1:
        return False, "A measure needs at least one support point."
    if d < 1:
        return False, "Support points need at least one coordinate."
    if not np.all(np.isfinite(points)):
        return False, "Support point coordinates must be finite."
    return True, None


def validate_weights(weights: np.ndarray, n: int) -> Check:
    if weights.ndim != 1 or weights.shape[0] != n:
        return False, f"Expected {n} weights, got shape {weights.shape}."
    if not np.all(np.isfinite(weights)):
        return False, "Weights must be finite."
    if np.any(weights < 0):
        index = int(np.argmax(weights < 0))
        return False, f"Weights must be nonnegative (atom {index} has weight {weights[index]})."
    return True, None


def validate_same_dim(dims: Iterable[int]) -> Check:
    dims = set(int(d) for d in dims)
    if len(dims) > 1:
        return False, f"All measures must share one dimension, found {sorted(dims)}."
    return True, None


def validate_labels(labels: np.ndarray) -> Check:
    """Binary labels must be exactly 0 or 1."""
    if labels.ndim != 1:
        return False, "Labels must be a vector."
    bad = ~np.isin(labels, (0, 1))
    if np.any(bad):
        index = int(np.argmax(bad))
        return False, f"Labels must be 0 or 1 (item {index} has {labels[index]})."
    return True, None


def validate_offset(offset: Sequence[int], shape: Tuple[int, int]) -> Check:
    """A co-occurrence offset must be nonzero and fit inside the image."""
    if len(offset) != 2:
        return False, "Offset must have two components (dr, dc)."
    dr, dc = int(offset[0]), int(offset[1])
    if dr == 0 and dc == 0:
        return False, "Offset must be nonzero."
    height, width = shape
    if abs(dr) >= height or abs(dc) >= width:
        return False, f"Offset ({dr}, {dc}) is larger than the {height}x{width} image."
    return True, None


def validate_wolfe(c1: float, c2: float) -> Check:
    if not 0 < c1 < c2 < 1:
        return False, f"Wolfe constants must satisfy 0 < c1 < c2 < 1 (got c1={c1}, c2={c2})."
    return True, None


def validate_format_tag(payload: Mapping, expected: str) -> Check:
    """JSON documents carry a ``format`` tag; unknown tags are rejected."""
    tag = payload.get('format', expected)
    if tag != expected:
        return False, f"Unsupported format '{tag}' (expected '{expected}')."
    return True, None
