"""Input validation helpers shared by the estimators and the pipeline."""

import numpy as np


def check_point_clouds(X, n_points=None):
    """Validate a (n, n_points, 3) stack of point clouds."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[-1] != 3:
        raise ValueError(f"expected point clouds of shape (n, n_points, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty point-cloud batch")
    if n_points is not None and X.shape[1] != n_points:
        raise ValueError(f"expected {n_points} points per cloud, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ValueError("point clouds contain non-finite values")
    return X


def check_class_labels(y, n_samples, n_classes):
    """Validate 0-based integer class labels aligned with the sample axis."""
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ValueError(f"expected {n_samples} class labels, got shape {y.shape}")
    y = y.astype(np.intp)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"class labels must lie in [0, {n_classes})")
    return y


def check_matrix(X, n_cols=None, name="array"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name}: expected a 2-d array, got shape {X.shape}")
    if n_cols is not None and X.shape[1] != n_cols:
        raise ValueError(f"{name}: expected {n_cols} columns, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ValueError(f"{name}: contains non-finite values")
    return X
