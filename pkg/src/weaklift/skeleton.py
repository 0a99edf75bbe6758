"""Skeleton topology, pose containers and geometric preprocessing.

Poses are stored as float64 arrays of shape ``(J, d)`` for a single pose or
``(N, J, d)`` for a batch, with ``d`` = 2 or 3. Every pose carries a frame tag
(``raw``, ``root_centered`` or ``normalized``) so that operations can refuse
inputs that would silently produce garbage, such as measuring bone lengths on
standardized coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar, Iterable, Sequence

import numpy as np

from .exceptions import FrameError, TopologyError, WeakliftError

RAW = "raw"
ROOT_CENTERED = "root_centered"
NORMALIZED = "normalized"
FRAMES = (RAW, ROOT_CENTERED, NORMALIZED)

STD_FLOOR = 1e-8

TOPOLOGY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SegmentClass:
    """One contralateral segment class, e.g. ``arm``.

    ``pairs`` lists (left, right) bones, each bone named by its child joint.
    """

    name: str
    pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class SkeletonTopology:
    name: str
    joint_names: tuple[str, ...]
    parent: tuple[int, ...]
    symmetric_segments: tuple[SegmentClass, ...]
    root_index: int
    neck_index: int
    left_hip_index: int | None = None
    right_hip_index: int | None = None
    _order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        J = len(self.joint_names)
        if J == 0:
            raise TopologyError("topology has no joints")
        if len(set(self.joint_names)) != J:
            raise TopologyError("duplicate joint names")
        if len(self.parent) != J:
            raise TopologyError(f"parent table has {len(self.parent)} entries for {J} joints")
        for idx in (self.root_index, self.neck_index):
            if not 0 <= idx < J:
                raise TopologyError(f"joint index {idx} out of range")
        for j, p in enumerate(self.parent):
            if j == self.root_index:
                if p != -1:
                    raise TopologyError("root joint must have parent -1")
            elif not 0 <= p < J or p == j:
                raise TopologyError(f"joint {self.joint_names[j]!r} has invalid parent {p}")
        object.__setattr__(self, "_order", self._topological_order())
        for seg in self.symmetric_segments:
            for left, right in seg.pairs:
                for child in (left, right):
                    if not 0 <= child < J or child == self.root_index:
                        raise TopologyError(
                            f"segment {seg.name!r} references bone {child} which is not in the tree")

    def _topological_order(self):
        J = len(self.joint_names)
        children = [[] for _ in range(J)]
        for j, p in enumerate(self.parent):
            if p >= 0:
                children[p].append(j)
        order, stack = [], [self.root_index]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(reversed(children[j]))
        if len(order) != J:
            # unreachable joints can only come from a cycle, since every non-root has a parent
            raise TopologyError("parent table contains a cycle (not all joints reachable from root)")
        return tuple(order)

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def order(self) -> tuple[int, ...]:
        """Joint indices ordered parent-before-child."""
        return self._order

    @property
    def bones(self) -> tuple[tuple[int, int], ...]:
        """(child, parent) pairs in joint-index order of the child."""
        return tuple((j, p) for j, p in enumerate(self.parent) if p >= 0)

    @property
    def n_bones(self) -> int:
        return self.n_joints - 1

    def bone_index(self, child: int) -> int:
        """Position of the bone ending at ``child`` in :attr:`bones`."""
        if child == self.root_index:
            raise TopologyError("the root joint has no bone")
        return child - (1 if child > self.root_index else 0)

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise TopologyError(f"unknown joint {name!r}") from None

    def hip_indices(self) -> tuple[int, ...]:
        return tuple(i for i in (self.left_hip_index, self.right_hip_index) if i is not None)

    # -- text description ------------------------------------------------

    def to_text(self) -> str:
        names = self.joint_names
        lines = [f"weaklift-topology {TOPOLOGY_FORMAT_VERSION}", f"name {self.name}"]
        for j, p in enumerate(self.parent):
            lines.append(f"joint {names[j]} {names[p] if p >= 0 else '-'}")
        lines.append(f"root {names[self.root_index]}")
        lines.append(f"neck {names[self.neck_index]}")
        if self.left_hip_index is not None and self.right_hip_index is not None:
            lines.append(f"hips {names[self.left_hip_index]} {names[self.right_hip_index]}")
        for seg in self.symmetric_segments:
            for left, right in seg.pairs:
                lines.append(f"segment {seg.name} {names[left]} {names[right]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SkeletonTopology":
        """Parse the line-based description written by :meth:`to_text`.

        Blank lines and ``#`` comments are ignored. Parent names may refer to
        joints declared later in the file.
        """
        lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines or lines[0].split()[0] != "weaklift-topology":
            raise TopologyError("missing 'weaklift-topology <version>' header")
        head = lines[0].split()
        if len(head) != 2 or head[1] != str(TOPOLOGY_FORMAT_VERSION):
            raise TopologyError(f"unsupported topology version {' '.join(head[1:])!r}, "
                                f"expected {TOPOLOGY_FORMAT_VERSION}")
        name, joints, root, neck, hips = "custom", [], None, None, None
        segments: dict[str, list[tuple[str, str]]] = {}
        for ln in lines[1:]:
            key, *rest = ln.split()
            if key == "name" and len(rest) == 1:
                name = rest[0]
            elif key == "joint" and len(rest) == 2:
                joints.append((rest[0], rest[1]))
            elif key == "root" and len(rest) == 1:
                root = rest[0]
            elif key == "neck" and len(rest) == 1:
                neck = rest[0]
            elif key == "hips" and len(rest) == 2:
                hips = tuple(rest)
            elif key == "segment" and len(rest) == 3:
                segments.setdefault(rest[0], []).append((rest[1], rest[2]))
            else:
                raise TopologyError(f"cannot parse topology line {ln!r}")
        if root is None or neck is None:
            raise TopologyError("topology must declare 'root' and 'neck'")
        names = [j for j, _ in joints]
        lookup = {n: i for i, n in enumerate(names)}

        def idx(n):
            if n not in lookup:
                raise TopologyError(f"unknown joint {n!r}")
            return lookup[n]

        parent = tuple(-1 if p == "-" else idx(p) for _, p in joints)
        segs = tuple(SegmentClass(k, tuple((idx(a), idx(b)) for a, b in v))
                     for k, v in segments.items())
        return cls(name=name, joint_names=tuple(names), parent=parent, symmetric_segments=segs,
                   root_index=idx(root), neck_index=idx(neck),
                   left_hip_index=idx(hips[0]) if hips else None,
                   right_hip_index=idx(hips[1]) if hips else None)


def load_topology(path) -> SkeletonTopology:
    return SkeletonTopology.from_text(Path(path).read_text())


H36M_JOINTS = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "neck", "nose", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)

_H36M_TEXT = """\
weaklift-topology 1
# 17-joint Human3.6m ordering; this order is the pose-file contract
name h36m17
joint pelvis -
joint r_hip pelvis
joint r_knee r_hip
joint r_ankle r_knee
joint l_hip pelvis
joint l_knee l_hip
joint l_ankle l_knee
joint spine pelvis
joint neck spine
joint nose neck
joint head nose
joint l_shoulder neck
joint l_elbow l_shoulder
joint l_wrist l_elbow
joint r_shoulder neck
joint r_elbow r_shoulder
joint r_wrist r_elbow
root pelvis
neck neck
hips l_hip r_hip
segment arm l_elbow r_elbow
segment arm l_wrist r_wrist
segment leg l_knee r_knee
segment leg l_ankle r_ankle
segment neck_shoulder l_shoulder r_shoulder
segment hip_pelvis l_hip r_hip
"""


def default_topology() -> SkeletonTopology:
    """The embedded 17-joint Human3.6m skeleton rooted at the pelvis."""
    return SkeletonTopology.from_text(_H36M_TEXT)


# -- pose containers ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Pose:
    coords: np.ndarray
    frame: str = RAW
    dim: ClassVar[int] = 0

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim not in (2, 3) or coords.shape[-1] != self.dim:
            raise ValueError(f"{type(self).__name__} expects shape (J, {self.dim}) or "
                             f"(N, J, {self.dim}), got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError(f"{type(self).__name__} contains non-finite coordinates")
        if self.frame not in FRAMES:
            raise FrameError(f"unknown frame {self.frame!r}")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n_joints(self) -> int:
        return self.coords.shape[-2]

    @property
    def is_batch(self) -> bool:
        return self.coords.ndim == 3

    def __len__(self):
        return self.coords.shape[0] if self.is_batch else 1

    def replace(self, coords, frame=None):
        return type(self)(coords, self.frame if frame is None else frame)

    def __eq__(self, other):
        return (type(self) is type(other) and self.frame == other.frame
                and np.array_equal(self.coords, other.coords))

    __hash__ = None


class Pose2D(_Pose):
    """2d joint coordinates, pixels when raw."""

    dim = 2


class Pose3D(_Pose):
    """3d joint coordinates in millimetres unless normalized."""

    dim = 3


def check_topology(pose: _Pose, topo: SkeletonTopology):
    if pose.n_joints != topo.n_joints:
        raise TopologyError(f"pose has {pose.n_joints} joints, topology {topo.name!r} "
                            f"has {topo.n_joints}")


def root_center(pose, topo: SkeletonTopology):
    """Translate every joint so the root sits at the origin.

    Accepts raw poses; an already root-centered pose is returned unchanged so
    the operation is idempotent.
    """
    check_topology(pose, topo)
    if pose.frame == NORMALIZED:
        raise FrameError("root_center expects a raw pose, got a normalized one")
    if pose.frame == ROOT_CENTERED:
        return pose
    c = pose.coords
    root = c[..., topo.root_index:topo.root_index + 1, :]
    return pose.replace(c - root, ROOT_CENTERED)


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    """Per-coordinate mean and standard deviation of flattened ``(J, d)`` poses."""

    mean: np.ndarray
    std: np.ndarray
    n_joints: int
    dim: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        size = self.n_joints * self.dim
        if mean.shape != (size,) or std.shape != (size,):
            raise ValueError(f"stats must have {size} entries")
        if np.any(std <= 0) or not np.all(np.isfinite(std)) or not np.all(np.isfinite(mean)):
            raise ValueError("std entries must be finite and positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def size(self):
        return self.n_joints * self.dim

    def apply(self, arr):
        """Standardize an array of shape (..., J, d) or (..., J*d)."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim >= 2 and arr.shape[-2:] == (self.n_joints, self.dim):
            arr = arr.reshape(*arr.shape[:-2], self.size)
        return (arr - self.mean) / self.std

    def invert(self, flat):
        """Map standardized flat vectors (..., J*d) back to (..., J, d)."""
        flat = np.asarray(flat, dtype=np.float64)
        return (flat * self.std + self.mean).reshape(*flat.shape[:-1], self.n_joints, self.dim)

    def __eq__(self, other):
        return (isinstance(other, NormalizationStats) and self.dim == other.dim
                and self.n_joints == other.n_joints and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.std, other.std))

    __hash__ = None


def _as_batch(poses) -> np.ndarray:
    if isinstance(poses, _Pose):
        if poses.frame != ROOT_CENTERED:
            raise FrameError(f"expected root_centered poses, got {poses.frame}")
        return poses.coords.reshape(-1, poses.n_joints, poses.dim)
    poses = list(poses)
    if not poses:
        raise WeakliftError("cannot fit normalization on an empty collection")
    frames = {p.frame for p in poses}
    if frames != {ROOT_CENTERED}:
        raise FrameError(f"expected uniformly root_centered poses, got frames {sorted(frames)}")
    return np.concatenate([p.coords.reshape(-1, p.n_joints, p.dim) for p in poses])


def fit_normalization(poses: "_Pose | Iterable[_Pose]") -> NormalizationStats:
    """Fit per-coordinate mean/std on root-centered poses.

    Standard deviations below ``STD_FLOOR`` are replaced by 1, which keeps
    constant coordinates (the root, after centering) at exactly zero.
    """
    batch = _as_batch(poses)
    if batch.shape[0] == 0:
        raise WeakliftError("cannot fit normalization on an empty collection")
    flat = batch.reshape(batch.shape[0], -1)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return NormalizationStats(mean, std, batch.shape[1], batch.shape[2])


def _check_stats(pose, stats):
    if pose.dim != stats.dim or pose.n_joints != stats.n_joints:
        raise ValueError(f"pose of {pose.n_joints}x{pose.dim} does not match stats of "
                         f"{stats.n_joints}x{stats.dim}")


def normalize(pose, stats: NormalizationStats):
    _check_stats(pose, stats)
    if pose.frame != ROOT_CENTERED:
        raise FrameError(f"normalize expects a root_centered pose, got {pose.frame}")
    flat = stats.apply(pose.coords)
    return pose.replace(flat.reshape(pose.coords.shape), NORMALIZED)


def denormalize(pose, stats: NormalizationStats):
    _check_stats(pose, stats)
    if pose.frame != NORMALIZED:
        raise FrameError(f"denormalize expects a normalized pose, got {pose.frame}")
    flat = pose.coords.reshape(*pose.coords.shape[:-2], stats.size)
    return pose.replace(stats.invert(flat), ROOT_CENTERED)


def bone_vectors(coords: np.ndarray, topo: SkeletonTopology) -> np.ndarray:
    """Child-minus-parent vectors, shape (..., n_bones, d)."""
    child, parent = np.array(topo.bones).T
    return coords[..., child, :] - coords[..., parent, :]


def bone_lengths(pose, topo: SkeletonTopology) -> np.ndarray:
    """Euclidean length of every bone, ordered as :attr:`SkeletonTopology.bones`."""
    if isinstance(pose, _Pose):
        check_topology(pose, topo)
        if pose.frame == NORMALIZED:
            raise FrameError("bone lengths are meaningless in the normalized frame")
        pose = pose.coords
    return np.linalg.norm(bone_vectors(np.asarray(pose, dtype=np.float64), topo), axis=-1)


def symmetric_bone_pairs(topo: SkeletonTopology) -> Sequence[tuple[int, int, int]]:
    """(segment class index, left bone index, right bone index) triples."""
    return [(c, topo.bone_index(left), topo.bone_index(right))
            for c, seg in enumerate(topo.symmetric_segments) for left, right in seg.pairs]
