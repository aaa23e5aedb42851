"""
Data validation utilities for the MDC segmentation pipeline.
"""

from typing import Iterable, Optional

import numpy as np

IGNORE = 255


class LabelError(ValueError):
    """Raised when labels or class ids are outside their legal range."""
    pass


def validate_binary_labels(labels: np.ndarray) -> None:
    """
    Check that a multi-hot label matrix only holds 0 and 1.

    Args:
        labels: Label array

    Raises:
        LabelError: If any entry is not 0 or 1
    """
    if not np.all((labels == 0) | (labels == 1)):
        raise LabelError("labels must be binary (0/1)")


def validate_mask_values(mask: np.ndarray, num_channels: int) -> None:
    """
    Check that a mask only holds class ids below num_channels or IGNORE.

    Args:
        mask: Integer mask
        num_channels: Number of legal class ids (background included)

    Raises:
        LabelError: If a class id is out of range
    """
    mask = np.asarray(mask)
    bad = (mask != IGNORE) & ((mask < 0) | (mask >= num_channels))
    if np.any(bad):
        raise LabelError(f"mask holds class id {int(mask[bad].flat[0])} >= {num_channels}")


def validate_label_set(labels: Iterable[int], num_classes: int) -> None:
    """
    Check an image-level label set against 1..num_classes.

    Raises:
        LabelError: If a label is out of range
    """
    for label in labels:
        if not 1 <= int(label) <= num_classes:
            raise LabelError(f"image label {label} outside 1..{num_classes}")


def validate_saliency(values: np.ndarray) -> None:
    """
    Range-check a saliency map.

    Raises:
        ValueError: If any value is outside [0, 1] or not finite
    """
    if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
        raise ValueError("saliency values must lie in [0, 1]")


def validate_fraction(value: float, name: str, low_open: bool = True, high_open: bool = True) -> None:
    """
    Check that value lies in the unit interval with the requested openness.

    Raises:
        ValueError: If the value is out of range
    """
    low_ok = value > 0.0 if low_open else value >= 0.0
    high_ok = value < 1.0 if high_open else value <= 1.0
    if not (low_ok and high_ok):
        raise ValueError(f"{name} must lie in {'(' if low_open else '['}0, 1{')' if high_open else ']'}, got {value}")


def labels_to_multi_hot(labels: Iterable[int], num_classes: int, dtype: Optional[np.dtype] = None) -> np.ndarray:
    """
    Convert a label set of class ids 1..C into a multi-hot vector of length C.

    Args:
        labels: Image-level class ids
        num_classes: C
        dtype: Output dtype (default float32)

    Returns:
        Multi-hot vector
    """
    vector = np.zeros(num_classes, dtype=dtype or np.float32)
    for label in labels:
        vector[int(label) - 1] = 1
    return vector
