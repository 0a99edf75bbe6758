"""Training objectives and their gradients with respect to network outputs.

Every loss takes a batch whose first axis indexes samples, sums squared
errors over all remaining axes of a sample and averages over the batch, so
``loss_3d`` on ``(N, J, 3)`` poses and on flattened ``(N, 3J)`` vectors gives
the same number.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import FrameError
from .skeleton import NORMALIZED, SkeletonTopology, _Pose, bone_vectors, symmetric_bone_pairs


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"loss weight {name}={value} outside [0, 1]")


@dataclass(frozen=True)
class LossReport:
    l3d: float
    l2d: float
    lsymm: float
    total: float
    batch_size: int
    alpha: float
    beta: float
    gamma: float

    def as_dict(self):
        return {"l3d": self.l3d, "l2d": self.l2d, "lsymm": self.lsymm, "total": self.total,
                "n": self.batch_size}


def _unwrap_pair(pred, target):
    if isinstance(pred, _Pose) or isinstance(target, _Pose):
        if not (isinstance(pred, _Pose) and isinstance(target, _Pose)):
            raise TypeError("pass either two poses or two arrays")
        if pred.frame != target.frame:
            raise FrameError(f"frame mismatch: {pred.frame} vs {target.frame}")
        pred, target = pred.coords, target.coords
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim < 2:
        raise ValueError("expected a batch with samples on the first axis")
    return pred, target


def _reduce(diff, weight):
    n = diff.shape[0]
    sq = diff * diff
    per_sample = sq.reshape(n, -1).sum(axis=1)
    if weight is not None:
        per_sample = per_sample * weight
    return per_sample, n


def squared_error_per_sample(pred, target, sample_weight=None):
    """Per-sample sum of squared errors, optionally multiplied by ``sample_weight``."""
    pred, target = _unwrap_pair(pred, target)
    return _reduce(pred - target, sample_weight)[0]


def loss_3d(pred, gt, sample_weight=None):
    """Supervised 3d loss: batch mean of per-sample summed squared error.

    ``sample_weight`` (shape (N,)) scales each sample's contribution while the
    normalizer stays N; a 0/1 vector implements gating of samples without 3d
    ground truth. Returns ``(loss, d loss / d pred)``.
    """
    pred, gt = _unwrap_pair(pred, gt)
    diff = pred - gt
    per_sample, n = _reduce(diff, sample_weight)
    grad = 2.0 * diff / n
    if sample_weight is not None:
        grad *= np.asarray(sample_weight, dtype=np.float64).reshape((n,) + (1,) * (diff.ndim - 1))
    return per_sample.sum() / n, grad


def _expand_visibility(visibility, shape):
    vis = np.asarray(visibility, dtype=np.float64)
    n = shape[0]
    if vis.ndim != 2 or vis.shape[0] != n:
        raise ValueError(f"visibility must have shape (N, J), got {vis.shape}")
    J = vis.shape[1]
    per_joint = int(np.prod(shape[1:])) // J
    if J * per_joint != int(np.prod(shape[1:])):
        raise ValueError(f"visibility with {J} joints does not fit coordinates of shape {shape}")
    return np.repeat(vis, per_joint, axis=1).reshape(shape)


def loss_reproj(reproj, target, visibility=None):
    """Re-projection loss on 2d poses, restricted to visible joints.

    ``visibility`` is an (N, J) boolean mask; hidden joints add neither loss
    nor gradient. Returns ``(loss, d loss / d reproj)``.
    """
    reproj, target = _unwrap_pair(reproj, target)
    diff = reproj - target
    if visibility is not None:
        diff = diff * _expand_visibility(visibility, diff.shape)
    per_sample, n = _reduce(diff, None)
    return per_sample.sum() / n, 2.0 * diff / n


def symmetry_per_sample(pred, topo: SkeletonTopology):
    """Per-sample bone-length symmetry penalty and the left-right differences."""
    vec = bone_vectors(pred, topo)
    lengths = np.sqrt((vec * vec).sum(axis=-1))
    triples = symmetric_bone_pairs(topo)
    left = [t[1] for t in triples]
    right = [t[2] for t in triples]
    diff = lengths[:, left] - lengths[:, right]
    n_classes = len(topo.symmetric_segments)
    return (diff * diff).sum(axis=1) / n_classes, diff, vec, lengths


def loss_symmetry(pred, topo: SkeletonTopology):
    """Left/right bone-length symmetry loss on metric 3d poses.

    Per sample, squared length differences of every contralateral bone pair
    are summed within each segment class and averaged over the classes; the
    result is averaged over the batch. Bones of zero length get a zero
    subgradient. Returns ``(loss, d loss / d pred)`` with ``pred`` of shape
    (N, J, 3).
    """
    if isinstance(pred, _Pose):
        if pred.frame == NORMALIZED:
            raise FrameError("symmetry loss needs metric (non-normalized) poses")
        pred = pred.coords
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[None]
    if pred.ndim != 3 or pred.shape[1:] != (topo.n_joints, 3):
        raise ValueError(f"expected poses of shape (N, {topo.n_joints}, 3), got {pred.shape}")
    n = pred.shape[0]
    n_classes = len(topo.symmetric_segments)
    if n_classes == 0:
        return 0.0, np.zeros_like(pred)
    per_sample, diff, vec, lengths = symmetry_per_sample(pred, topo)
    triples = symmetric_bone_pairs(topo)
    d_len = np.zeros_like(lengths)
    coef = 2.0 * diff / (n_classes * n)
    for k, (_, lb, rb) in enumerate(triples):
        d_len[:, lb] += coef[:, k]
        d_len[:, rb] -= coef[:, k]
    safe = np.where(lengths > 0, lengths, 1.0)
    unit = np.where((lengths > 0)[..., None], vec / safe[..., None], 0.0)
    d_vec = unit * d_len[..., None]
    grad = np.zeros_like(pred)
    child, parent = np.array(topo.bones).T
    np.add.at(grad, (slice(None), child), d_vec)
    np.add.at(grad, (slice(None), parent), -d_vec)
    return per_sample.sum() / n, grad


def total_loss(l3d, l2d, lsymm, weights: LossWeights, has_3d_gt=True, batch_size=0):
    """Weighted total objective; ``alpha`` is dropped when 3d ground truth is absent."""
    alpha = weights.alpha if has_3d_gt else 0.0
    parts = (float(l3d), float(l2d), float(lsymm))
    if not all(np.isfinite(parts)):
        raise ValueError(f"non-finite loss component in {parts}")
    total = alpha * parts[0] + weights.beta * parts[1] + weights.gamma * parts[2]
    return LossReport(parts[0], parts[1], parts[2], total, batch_size,
                      alpha, weights.beta, weights.gamma)
