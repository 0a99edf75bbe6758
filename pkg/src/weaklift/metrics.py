"""3d pose evaluation: MPJE, PCK, AUC and skeleton-convention adjustments."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FrameError, WeakliftError
from .skeleton import NORMALIZED, SkeletonTopology, _Pose, bone_vectors

PCK_THRESHOLD = 150.0
AUC_GRID = np.linspace(150.0 / 31, 150.0, 31)


def _pair(pred, gt):
    if isinstance(pred, _Pose) or isinstance(gt, _Pose):
        if not (isinstance(pred, _Pose) and isinstance(gt, _Pose)):
            raise TypeError("pass either two poses or two arrays")
        if pred.frame != gt.frame:
            raise FrameError(f"frame mismatch: {pred.frame} vs {gt.frame}")
        if pred.frame == NORMALIZED:
            raise FrameError("metrics need metric-frame poses")
        pred, gt = pred.coords, gt.coords
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ValueError(f"shape mismatch or not 3d: {pred.shape} vs {gt.shape}")
    return pred, gt


def joint_errors(pred, gt):
    """Euclidean error per joint, shape (..., J)."""
    pred, gt = _pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpje(pred, gt):
    """Mean per-joint Euclidean error in mm, no rigid alignment."""
    return float(joint_errors(pred, gt).mean())


def pck(pred, gt, threshold=PCK_THRESHOLD):
    """Percentage of joints whose error is below ``threshold`` mm."""
    if threshold <= 0:
        raise ValueError("PCK threshold must be positive")
    return float(100.0 * (joint_errors(pred, gt) < threshold).mean())


def auc(pred, gt, thresholds=AUC_GRID):
    """Mean of PCK/100 over an ascending grid of positive thresholds."""
    grid = np.asarray(thresholds, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("AUC needs a non-empty threshold grid")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("AUC thresholds must be positive and ascending")
    err = joint_errors(pred, gt).reshape(-1)
    return float((err[None, :] < grid[:, None]).mean())


def retarget(pred, target_lengths, topo: SkeletonTopology):
    """Rescale every bone to ``target_lengths`` keeping its direction.

    Joints are placed parent-before-child starting at the root, so a bone's
    new end point moves together with everything above it in the tree.
    Works on a single pose (J, 3) or a batch (N, J, 3).
    """
    frame = None
    if isinstance(pred, _Pose):
        if pred.frame == NORMALIZED:
            raise FrameError("retarget needs a metric-frame pose")
        frame, pred = pred, pred.coords
    coords = np.asarray(pred, dtype=np.float64)
    target = np.broadcast_to(np.asarray(target_lengths, dtype=np.float64),
                             coords.shape[:-2] + (topo.n_bones,))
    if np.any(target <= 0):
        raise ValueError("target bone lengths must be positive")
    vec = bone_vectors(coords, topo)
    length = np.linalg.norm(vec, axis=-1)
    zero = np.argwhere(length == 0)
    if zero.size:
        child = topo.bones[zero[0][-1]][0]
        raise WeakliftError(f"bone ending at {topo.joint_names[child]!r} has zero length; "
                            "its direction is undefined")
    unit = vec / length[..., None]
    out = np.empty_like(coords)
    out[..., topo.root_index, :] = coords[..., topo.root_index, :]
    for j in topo.order:
        p = topo.parent[j]
        if p < 0:
            continue
        b = topo.bone_index(j)
        out[..., j, :] = out[..., p, :] + unit[..., b, :] * target[..., b, None]
    return frame.replace(out) if frame is not None else out


def pelvis_adjust(pose, topo: SkeletonTopology, ratio=0.2):
    """Move the pelvis and both hips toward the neck by ``ratio`` of the gap."""
    frame = None
    if isinstance(pose, _Pose):
        frame, pose = pose, pose.coords
    out = np.array(pose, dtype=np.float64)
    neck = out[..., topo.neck_index, :].copy()
    for j in (topo.root_index, *topo.hip_indices()):
        out[..., j, :] += ratio * (neck - out[..., j, :])
    return frame.replace(out) if frame is not None else out


@dataclass
class EvalReport:
    mpje: float
    pck: float
    auc: float
    pck_threshold: float
    n_samples: int
    per_joint: dict = field(default_factory=dict)
    per_activity: dict = field(default_factory=dict)

    def as_dict(self):
        return {"mpje": self.mpje, "pck": self.pck, "auc": self.auc,
                "pck_threshold": self.pck_threshold, "n": self.n_samples,
                "per_joint": self.per_joint, "per_activity": self.per_activity}

    def to_jsonl(self, meta=None):
        """Line-delimited JSON: one summary line and one line per activity."""
        head = {"kind": "eval", **{k: v for k, v in self.as_dict().items() if k != "per_activity"}}
        if meta is not None:
            head["config"] = meta
        lines = [json.dumps(head, sort_keys=True)]
        for tag, row in self.per_activity.items():
            lines.append(json.dumps({"kind": "activity", "tag": tag, **row}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def table(self):
        rows = [f"{'activity':<24}{'n':>7}{'MPJE':>10}{'PCK':>8}{'AUC':>8}"]
        for tag, r in self.per_activity.items():
            rows.append(f"{tag:<24}{r['n']:>7d}{r['mpje']:>10.2f}{r['pck']:>8.1f}{r['auc']:>8.3f}")
        rows.append(f"{'all':<24}{self.n_samples:>7d}{self.mpje:>10.2f}{self.pck:>8.1f}{self.auc:>8.3f}")
        return "\n".join(rows)


def evaluate(pred, gt, tags=None, topo: SkeletonTopology | None = None,
             threshold=PCK_THRESHOLD, thresholds=AUC_GRID) -> EvalReport:
    """Aggregate metrics over a batch, broken down by tag when given."""
    pred, gt = _pair(pred, gt)
    err = joint_errors(pred, gt)
    per_joint = {}
    if topo is not None:
        per_joint = {name: float(err[:, j].mean()) for j, name in enumerate(topo.joint_names)}
    per_activity = {}
    if tags is not None:
        tags = np.asarray(tags, dtype=object)
        for tag in sorted(set(tags.tolist())):
            sel = tags == tag
            per_activity[tag] = {"n": int(sel.sum()), "mpje": mpje(pred[sel], gt[sel]),
                                 "pck": pck(pred[sel], gt[sel], threshold),
                                 "auc": auc(pred[sel], gt[sel], thresholds)}
    return EvalReport(mpje(pred, gt), pck(pred, gt, threshold), auc(pred, gt, thresholds),
                      threshold, len(pred), per_joint, per_activity)
