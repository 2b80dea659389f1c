"""Small input checks shared across modules."""

from __future__ import annotations

import numpy as np


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_features(features, dim: int | None = None) -> np.ndarray:
    features = check_finite("features", features)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {features.shape}")
    if dim is not None and features.shape[1] != dim:
        raise ValueError(
            f"features have dimension {features.shape[1]}, expected {dim}"
        )
    return features


def check_labels(labels, num_classes: int, length: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        as_int = labels.astype(np.int64)
        if not np.array_equal(as_int, labels):
            raise ValueError("labels must be integers")
        labels = as_int
    labels = labels.astype(np.int64, copy=False)
    if length is not None and labels.shape[0] != length:
        raise ValueError(
            f"got {labels.shape[0]} labels for {length} samples"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def check_positive_vector(name: str, arr, length: int | None = None) -> np.ndarray:
    arr = check_finite(name, arr)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {arr.shape[0]}")
    if np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def check_norm_order(p) -> float:
    p = float(p)
    if not (p >= 1.0):  # NaN fails this too
        raise ValueError(f"norm order p must be >= 1 or inf, got {p}")
    return p
