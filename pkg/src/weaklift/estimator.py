"""scikit-learn style wrappers around the preprocessing and the lifting pipeline.

Pose arrays are accepted either stacked, (N, J, d), or flattened, (N, J*d).
For :class:`WeaklySupervisedLifter` a target row filled with NaN marks a
sample that has 2d input only.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics
from ._validation import check_pose_array, check_visibility, labeled_rows
from .data import SampleArrays
from .pipeline import (TrainConfig, create_bundle, predict_arrays, train_joint, train_phase_lifter,
                       train_phase_reprojector)
from .skeleton import ROOT_CENTERED, default_topology


class RootCenterer(TransformerMixin, BaseEstimator):
    """Subtract the root joint from every joint; stateless."""

    def __init__(self, root_index=0, dim=2):
        self.root_index = root_index
        self.dim = dim

    def fit(self, X, y=None):
        arr = check_pose_array(X, self.dim)
        if not 0 <= self.root_index < arr.shape[1]:
            raise ValueError(f"root_index {self.root_index} outside 0..{arr.shape[1] - 1}")
        self.n_joints_ = arr.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_joints_")
        arr = check_pose_array(X, self.dim, self.n_joints_)
        out = arr - arr[:, self.root_index:self.root_index + 1]
        return out.reshape(np.shape(X))


class PoseStandardizer(TransformerMixin, BaseEstimator):
    """Per-coordinate zero mean / unit variance over root-centered poses.

    Coordinates whose spread is below ``std_floor`` (the root itself) are
    left unscaled. Output is flattened to (N, J*dim).
    """

    def __init__(self, dim=3, std_floor=1e-8):
        self.dim = dim
        self.std_floor = std_floor

    def fit(self, X, y=None):
        flat = check_pose_array(X, self.dim).reshape(np.shape(X)[0], -1)
        std = flat.std(axis=0)
        self.mean_ = flat.mean(axis=0)
        self.scale_ = np.where(std < self.std_floor, 1.0, std)
        self.n_features_in_ = flat.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        flat = check_pose_array(X, self.dim, self.n_features_in_ // self.dim).reshape(len(X), -1)
        return (flat - self.mean_) / self.scale_

    def inverse_transform(self, Z):
        check_is_fitted(self, "mean_")
        Z = np.asarray(Z, dtype=np.float64)
        return (Z * self.scale_ + self.mean_).reshape(len(Z), -1, self.dim)


class WeaklySupervisedLifter(RegressorMixin, BaseEstimator):
    """2d-to-3d pose lifter trained with 3d, re-projection and symmetry losses.

    ``fit(X, y)`` takes raw 2d poses ``X`` (pixels) and camera-frame 3d poses
    ``y`` (mm); rows of ``y`` that are entirely NaN are used as 2d-only
    samples. ``predict`` returns root-relative 3d poses of shape (N, J, 3).
    ``score`` is the percentage of correct keypoints at ``pck_threshold``.
    """

    def __init__(self, hidden=1024, dropout=0.5, batch_norm=True, blocks=2, alpha=0.5, beta=0.5,
                 gamma=1.0, symmetry_unit=0.0, lr=1e-4, batch_size=64, phase1_epochs=50,
                 phase2_epochs=50, joint_epochs=100, mix_ratio=(1, 1), seed=0,
                 pck_threshold=metrics.PCK_THRESHOLD, topology=None):
        self.hidden = hidden
        self.dropout = dropout
        self.batch_norm = batch_norm
        self.blocks = blocks
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.symmetry_unit = symmetry_unit
        self.lr = lr
        self.batch_size = batch_size
        self.phase1_epochs = phase1_epochs
        self.phase2_epochs = phase2_epochs
        self.joint_epochs = joint_epochs
        self.mix_ratio = mix_ratio
        self.seed = seed
        self.pck_threshold = pck_threshold
        self.topology = topology

    def _config(self):
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def _arrays(self, X, y, visibility, topo):
        J = topo.n_joints
        x = check_pose_array(X, 2, J)
        root = topo.root_index
        x = x - x[:, root:root + 1]
        n = len(x)
        if y is None:
            y3 = np.zeros((n, J, 3))
            has = np.zeros(n, dtype=bool)
        else:
            y3 = check_pose_array(y, 3, J, "y", allow_nan=True)
            if len(y3) != n:
                raise ValueError(f"X has {n} samples, y has {len(y3)}")
            has = labeled_rows(y3)
            y3 = np.where(has[:, None, None], y3 - y3[:, root:root + 1], 0.0)
        vis = check_visibility(visibility, n, J)
        ids = np.array([f"s{i}" for i in range(n)], dtype=object)
        tags = np.full(n, "", dtype=object)
        return SampleArrays(x, y3, has, vis, tags, ids, ROOT_CENTERED, ROOT_CENTERED)

    def fit(self, X, y, visibility=None):
        topo = self.topology or default_topology()
        arrays = self._arrays(X, y, visibility, topo)
        labeled = arrays.take(np.flatnonzero(arrays.has_3d))
        unlabeled = arrays.take(np.flatnonzero(~arrays.has_3d))
        if not len(labeled):
            raise ValueError("y has no labeled rows")
        config = self._config()
        bundle = create_bundle(labeled, config, topo,
                               extra_2d=unlabeled if len(unlabeled) else None)
        train_phase_lifter(bundle, labeled)
        train_phase_reprojector(bundle, labeled)
        train_joint(bundle, labeled, unlabeled if len(unlabeled) else None)
        self.bundle_ = bundle
        self.n_joints_ = topo.n_joints
        return self

    def predict(self, X, visibility=None):
        check_is_fitted(self, "bundle_")
        arrays = self._arrays(X, None, visibility, self.bundle_.topology)
        return predict_arrays(self.bundle_, arrays.y2d, arrays.visibility)[0]

    def reproject(self, X, visibility=None):
        """Root-centered 2d re-projection of the predicted 3d poses."""
        check_is_fitted(self, "bundle_")
        arrays = self._arrays(X, None, visibility, self.bundle_.topology)
        return predict_arrays(self.bundle_, arrays.y2d, arrays.visibility)[1]

    def score(self, X, y):
        topo = self.bundle_.topology if hasattr(self, "bundle_") else default_topology()
        y3 = check_pose_array(y, 3, topo.n_joints, "y")
        y3 = y3 - y3[:, topo.root_index:topo.root_index + 1]
        return metrics.pck(self.predict(X), y3, self.pck_threshold)
