"""Input checks shared by the estimator wrappers and the command line."""
from __future__ import annotations

import numpy as np


def check_pose_array(X, dim, n_joints=None, name="X", allow_nan=False):
    """Return ``X`` as a float64 array of shape (N, J, dim).

    Accepts stacked poses (N, J, dim) or flattened rows (N, J * dim).
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2:
        if arr.shape[1] % dim:
            raise ValueError(f"{name}: {arr.shape[1]} columns is not a multiple of {dim}")
        arr = arr.reshape(arr.shape[0], -1, dim)
    if arr.ndim != 3 or arr.shape[2] != dim:
        raise ValueError(f"{name}: expected shape (N, J, {dim}) or (N, J*{dim}), got {np.shape(X)}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name}: no samples")
    if n_joints is not None and arr.shape[1] != n_joints:
        raise ValueError(f"{name}: {arr.shape[1]} joints, expected {n_joints}")
    bad = ~np.isfinite(arr)
    if allow_nan:
        bad &= ~np.isnan(arr)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise ValueError(f"{name}: non-finite value in sample {row}")
    return arr


def check_visibility(visibility, n, n_joints):
    """Boolean (N, J) mask; ``None`` means every joint is visible."""
    if visibility is None:
        return np.ones((n, n_joints), dtype=bool)
    vis = np.asarray(visibility)
    if vis.shape != (n, n_joints):
        raise ValueError(f"visibility: expected shape ({n}, {n_joints}), got {vis.shape}")
    if not np.isin(vis, (0, 1)).all():
        raise ValueError("visibility entries must be 0/1 or boolean")
    return vis.astype(bool)


def labeled_rows(y):
    """Rows of a (N, J, 3) target that carry ground truth; all-NaN rows are unlabeled."""
    missing = np.isnan(y).all(axis=(1, 2))
    partial = np.isnan(y).any(axis=(1, 2)) & ~missing
    if partial.any():
        raise ValueError(f"y: sample {int(np.argmax(partial))} is only partly labeled")
    return ~missing
