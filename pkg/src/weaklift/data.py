"""Synthetic pose generation, pose files, 2d augmentation and batch mixing."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .exceptions import FrameError, PoseFileError, TopologyError
from .skeleton import (FRAMES, RAW, ROOT_CENTERED, Pose2D, Pose3D, SkeletonTopology,
                       default_topology, root_center)

POSE_FILE_FORMAT = "weaklift-poses"
POSE_FILE_VERSION = 1


@dataclass
class Sample:
    y2d: Pose2D
    y3d: Pose3D | None = None
    visibility: np.ndarray | None = None
    source_tag: str = ""
    sample_id: str = ""

    def __post_init__(self):
        if self.y2d.is_batch:
            raise ValueError("a sample holds a single pose")
        J = self.y2d.n_joints
        if self.y3d is not None and (self.y3d.is_batch or self.y3d.n_joints != J):
            raise TopologyError("y3d does not share the joint count of y2d")
        vis = np.ones(J, dtype=bool) if self.visibility is None else np.asarray(self.visibility, dtype=bool)
        if vis.shape != (J,):
            raise ValueError(f"visibility must have {J} entries")
        self.visibility = vis

    @property
    def has_3d(self):
        return self.y3d is not None

    def __eq__(self, other):
        return (isinstance(other, Sample) and self.y2d == other.y2d and self.y3d == other.y3d
                and np.array_equal(self.visibility, other.visibility)
                and self.source_tag == other.source_tag and self.sample_id == other.sample_id)


# -- camera ------------------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    """Camera used only by the synthetic generator.

    Camera axes: x right, y down, z forward. ``distance`` is the nominal
    pelvis depth in mm (jittered per sample by ``distance_jitter``) and
    ``elevation_deg`` tilts the view downward onto the subject.
    """

    kind: str = "pinhole"
    focal: float = 1000.0
    principal: tuple[float, float] = (500.0, 500.0)
    distance: float = 4500.0
    distance_jitter: float = 0.1
    elevation_deg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("pinhole", "orthographic"):
            raise ValueError(f"unknown camera kind {self.kind!r}")
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if not 0 <= self.distance_jitter < 1:
            raise ValueError("distance_jitter must be in [0, 1)")
        # generated skeletons stay within ~1.2 m of the pelvis
        if self.distance * (1 - self.distance_jitter) <= 1200.0:
            raise ValueError("camera too close: subject would cross the image plane")


def project(pose: Pose3D, camera: CameraModel) -> Pose2D:
    """Project camera-frame 3d joints to the image."""
    c = pose.coords
    if camera.kind == "orthographic":
        return Pose2D(c[..., :2].copy(), RAW)
    z = c[..., 2]
    if np.any(z <= 0):
        raise ValueError("joint at or behind the camera plane")
    uv = camera.focal * c[..., :2] / z[..., None] + np.asarray(camera.principal)
    return Pose2D(uv, RAW)


# -- synthetic generator -------------------------------------------------------

# rest offsets in a body frame: x toward the subject's left, y up, z forward (mm)
_REST = {
    "r_hip": (-125.0, 0.0, 0.0), "l_hip": (125.0, 0.0, 0.0),
    "r_knee": (0.0, -440.0, 0.0), "l_knee": (0.0, -440.0, 0.0),
    "r_ankle": (0.0, -430.0, 0.0), "l_ankle": (0.0, -430.0, 0.0),
    "spine": (0.0, 230.0, 0.0), "neck": (0.0, 250.0, 0.0),
    "nose": (0.0, 115.0, 50.0), "head": (0.0, 110.0, -40.0),
    "l_shoulder": (150.0, -20.0, 0.0), "r_shoulder": (-150.0, -20.0, 0.0),
    "l_elbow": (0.0, -280.0, 0.0), "r_elbow": (0.0, -280.0, 0.0),
    "l_wrist": (0.0, -250.0, 0.0), "r_wrist": (0.0, -250.0, 0.0),
}

# angle ranges in degrees per activity
_ACTIVITIES = {
    "standing": dict(torso_pitch=(-5, 15), hip_flex=(-15, 25), knee=(0, 25),
                     arm_flex=(-30, 60), arm_abd=(0, 40), elbow=(0, 60)),
    "walking": dict(torso_pitch=(0, 15), hip_flex=(-30, 40), knee=(0, 70),
                    arm_flex=(-40, 40), arm_abd=(0, 20), elbow=(0, 50)),
    "reaching": dict(torso_pitch=(-10, 30), hip_flex=(-10, 30), knee=(0, 30),
                     arm_flex=(20, 170), arm_abd=(0, 120), elbow=(0, 120)),
    "sitting": dict(torso_pitch=(-10, 30), hip_flex=(60, 110), knee=(60, 120),
                    arm_flex=(-20, 70), arm_abd=(0, 40), elbow=(20, 120)),
    "bending": dict(torso_pitch=(30, 80), hip_flex=(-10, 40), knee=(0, 50),
                    arm_flex=(-20, 100), arm_abd=(0, 60), elbow=(0, 90)),
}
ACTIVITIES = tuple(_ACTIVITIES)


def _rot(axis, deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _sample_pose(rng, topo, lengths_scale, activity):
    """One skeleton in the body frame with the pelvis at the origin."""
    r = _ACTIVITIES[activity]
    u = lambda key: rng.uniform(*r[key])
    local = {name: np.eye(3) for name in topo.joint_names}
    # rotations applied at a joint act on the bones of its children
    local["pelvis"] = _rot("x", rng.uniform(-5, 5))
    local["spine"] = (_rot("y", rng.uniform(-30, 30)) @ _rot("z", rng.uniform(-15, 15))
                      @ _rot("x", u("torso_pitch")))
    head = _rot("y", rng.uniform(-40, 40)) @ _rot("x", rng.uniform(-20, 30))
    for side, sign in (("l", 1.0), ("r", -1.0)):
        local[f"{side}_shoulder"] = (_rot("z", sign * u("arm_abd")) @ _rot("x", -u("arm_flex")))
        local[f"{side}_elbow"] = _rot("x", -u("elbow"))
        local[f"{side}_hip"] = (_rot("z", sign * rng.uniform(-5, 30)) @ _rot("x", -u("hip_flex")))
        local[f"{side}_knee"] = _rot("x", u("knee"))
    # extra rotations carried by a bone itself and inherited by its subtree
    own = {"spine": local.pop("spine"), "nose": head}
    J = topo.n_joints
    pos = np.zeros((J, 3))
    frames = [None] * J
    for j in topo.order:
        p = topo.parent[j]
        name = topo.joint_names[j]
        if p < 0:
            frames[j] = local[name]
            continue
        base = frames[p] @ own[name] if name in own else frames[p]
        pos[j] = pos[p] + base @ (np.asarray(_REST[name]) * lengths_scale[name])
        frames[j] = base @ local.get(name, np.eye(3))
    return pos


def _bone_scales(rng, topo):
    overall = rng.uniform(0.85, 1.15)
    scales = {}
    for name in topo.joint_names:
        key = name[2:] if name[:2] in ("l_", "r_") else name
        if key not in scales:
            scales[key] = overall * rng.uniform(0.95, 1.05)
        scales[name] = scales[key]
    return scales


def generate_synthetic(count, seed, camera: CameraModel | None = None,
                       topo: SkeletonTopology | None = None, source_tag="synth",
                       activities: Sequence[str] = ACTIVITIES, subjects=8):
    """Forward-kinematic skeletons projected through ``camera``.

    Each sample is drawn from one of ``subjects`` body shapes (left/right bone
    lengths identical by construction), one activity's joint-angle ranges and
    a uniform yaw. ``y3d`` is in camera coordinates (mm), ``y2d`` its exact
    projection. Tags are ``"<source_tag>/<activity>"``.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    camera = camera or CameraModel()
    topo = topo or default_topology()
    missing = set(topo.joint_names) - set(_REST) - {topo.joint_names[topo.root_index]}
    if missing:
        raise TopologyError(f"synthetic generator has no rest pose for joints {sorted(missing)}")
    rng = np.random.default_rng(seed)
    shapes = [_bone_scales(rng, topo) for _ in range(subjects)]
    tilt = _rot("x", camera.elevation_deg)
    samples = []
    for i in range(count):
        activity = activities[rng.integers(len(activities))]
        body = _sample_pose(rng, topo, shapes[rng.integers(subjects)], activity)
        body = body @ _rot("y", rng.uniform(-180, 180)).T
        depth = camera.distance * (1 + rng.uniform(-camera.distance_jitter, camera.distance_jitter))
        shift = np.array([rng.uniform(-200, 200), rng.uniform(-150, 150), 0.0])
        cam = body * np.array([1.0, -1.0, 1.0]) @ tilt.T + shift + np.array([0.0, 0.0, depth])
        y3d = Pose3D(cam, RAW)
        samples.append(Sample(project(y3d, camera), y3d, None, f"{source_tag}/{activity}",
                              f"{source_tag}-{seed}-{i:06d}"))
    return samples


# -- augmentation ----------------------------------------------------------------


@dataclass(frozen=True)
class AugmentationSpec:
    rotation_deg: tuple[float, float] = (-30.0, 30.0)
    scale: tuple[float, float] = (0.8, 1.2)
    copies: int = 35

    def __post_init__(self):
        if self.scale[0] <= 0 or self.scale[1] < self.scale[0]:
            raise ValueError("scale range must be positive and ordered")
        if self.rotation_deg[1] < self.rotation_deg[0]:
            raise ValueError("rotation range must be ordered")
        if self.copies < 0:
            raise ValueError("copies must be non-negative")


def rotate_scale_2d(coords, angle_deg, scale):
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return scale * coords @ rot.T


def augment_2d(sample: Sample, spec: AugmentationSpec, seed) -> list[Sample]:
    """In-plane rotated and scaled copies of a root-centered 2d pose, without 3d labels."""
    if sample.y2d.frame != ROOT_CENTERED:
        raise FrameError("augment_2d expects a root_centered y2d")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(spec.copies):
        angle = rng.uniform(*spec.rotation_deg)
        scale = rng.uniform(*spec.scale)
        coords = rotate_scale_2d(sample.y2d.coords, angle, scale)
        out.append(Sample(Pose2D(coords, ROOT_CENTERED), None, sample.visibility.copy(),
                          sample.source_tag, f"{sample.sample_id}~aug{k}"))
    return out


def root_center_samples(samples, topo):
    return [Sample(root_center(s.y2d, topo), None if s.y3d is None else root_center(s.y3d, topo),
                   s.visibility, s.source_tag, s.sample_id) for s in samples]


def drop_3d(samples):
    """2d-only copies of ``samples``."""
    return [Sample(s.y2d, None, s.visibility, s.source_tag, s.sample_id) for s in samples]


# -- pose files ------------------------------------------------------------------

_HEADER_KEYS = {"format", "version", "topology", "joints", "units", "meta"}
_RECORD_KEYS = {"id", "source", "y2d", "y3d", "visibility"}
_POSE_KEYS = {"frame", "coords"}


def _pose_json(pose):
    return {"frame": pose.frame, "coords": pose.coords.tolist()}


def save_poses(samples, path, topo: SkeletonTopology | None = None, meta=None):
    """Write samples as a line-delimited JSON pose file.

    Line 1 is a header naming the topology and units, every further line is
    one sample. Floats are written in shortest round-trip form so
    save/load/save is byte-stable.
    """
    topo = topo or default_topology()
    header = {"format": POSE_FILE_FORMAT, "version": POSE_FILE_VERSION, "topology": topo.name,
              "joints": topo.n_joints, "units": {"y2d": "px", "y3d": "mm"}}
    if meta is not None:
        header["meta"] = meta
    lines = [json.dumps(header, sort_keys=True)]
    for s in samples:
        if s.y2d.n_joints != topo.n_joints:
            raise TopologyError(f"sample {s.sample_id!r} has {s.y2d.n_joints} joints")
        rec = {"id": s.sample_id, "source": s.source_tag, "y2d": _pose_json(s.y2d),
               "y3d": None if s.y3d is None else _pose_json(s.y3d),
               "visibility": [int(v) for v in s.visibility]}
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_header(path):
    with open(path) as fh:
        first = fh.readline()
    return _parse_header(first)


def _parse_header(line):
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise PoseFileError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != POSE_FILE_FORMAT:
        raise PoseFileError(f"not a {POSE_FILE_FORMAT} file")
    if header.get("version") != POSE_FILE_VERSION:
        raise PoseFileError(f"unsupported version {header.get('version')!r}", version=POSE_FILE_VERSION)
    unknown = set(header) - _HEADER_KEYS
    if unknown:
        raise PoseFileError(f"unknown header fields {sorted(unknown)}", version=POSE_FILE_VERSION)
    if not isinstance(header.get("joints"), int):
        raise PoseFileError("header lacks an integer 'joints' count", version=POSE_FILE_VERSION)
    return header


def _parse_pose(obj, cls, J, idx, key):
    if not isinstance(obj, dict) or set(obj) != _POSE_KEYS:
        raise PoseFileError(f"{key} must be an object with fields {sorted(_POSE_KEYS)}", idx,
                            POSE_FILE_VERSION)
    if obj["frame"] not in FRAMES:
        raise PoseFileError(f"{key} has unknown frame {obj['frame']!r}", idx, POSE_FILE_VERSION)
    try:
        coords = np.array(obj["coords"], dtype=np.float64)
    except (TypeError, ValueError):
        raise PoseFileError(f"{key} coordinates are not numeric", idx, POSE_FILE_VERSION) from None
    if coords.ndim != 2 or coords.shape[1] != cls.dim:
        raise PoseFileError(f"{key} coordinates must be a list of {cls.dim}-vectors", idx,
                            POSE_FILE_VERSION)
    if coords.shape[0] != J:
        raise TopologyError(f"record {idx}: {key} has {coords.shape[0]} joints, expected {J}")
    if not np.all(np.isfinite(coords)):
        raise PoseFileError(f"{key} contains non-finite coordinates", idx, POSE_FILE_VERSION)
    return cls(coords, obj["frame"])


def load_poses(path, topo: SkeletonTopology | None = None) -> list[Sample]:
    """Read a pose file written by :func:`save_poses`, validating every record."""
    topo = topo or default_topology()
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise PoseFileError("empty pose file")
    header = _parse_header(lines[0])
    if header["joints"] != topo.n_joints:
        raise TopologyError(f"file has {header['joints']} joints, topology {topo.name!r} "
                            f"has {topo.n_joints}")
    if header.get("topology", topo.name) != topo.name:
        raise TopologyError(f"file uses topology {header['topology']!r}, expected {topo.name!r}")
    J = topo.n_joints
    samples = []
    for idx, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        try:
            rec = json.loads(line, parse_constant=lambda c: float(c))
        except json.JSONDecodeError as exc:
            raise PoseFileError(f"invalid JSON: {exc}", idx, POSE_FILE_VERSION) from None
        if not isinstance(rec, dict):
            raise PoseFileError("record must be a JSON object", idx, POSE_FILE_VERSION)
        unknown = set(rec) - _RECORD_KEYS
        if unknown:
            raise PoseFileError(f"unknown fields {sorted(unknown)}", idx, POSE_FILE_VERSION)
        if "y2d" not in rec:
            raise PoseFileError("record lacks y2d", idx, POSE_FILE_VERSION)
        y2d = _parse_pose(rec["y2d"], Pose2D, J, idx, "y2d")
        y3d = None if rec.get("y3d") is None else _parse_pose(rec["y3d"], Pose3D, J, idx, "y3d")
        vis = rec.get("visibility")
        if vis is None:
            vis = [1] * J
        if not isinstance(vis, list) or len(vis) != J or any(v not in (0, 1) for v in vis):
            raise PoseFileError(f"visibility must be a list of {J} 0/1 flags", idx, POSE_FILE_VERSION)
        samples.append(Sample(y2d, y3d, np.array(vis, dtype=bool), str(rec.get("source", "")),
                              str(rec.get("id", idx))))
    return samples


# -- batching ----------------------------------------------------------------------


@dataclass
class SampleArrays:
    """Column-stacked view of a sample list, the form batching works on."""

    y2d: np.ndarray
    y3d: np.ndarray
    has_3d: np.ndarray
    visibility: np.ndarray
    tags: np.ndarray
    ids: np.ndarray
    frame2d: str = ROOT_CENTERED
    frame3d: str = ROOT_CENTERED

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            raise ValueError("no samples")
        J = samples[0].y2d.n_joints
        frames2 = {s.y2d.frame for s in samples}
        frames3 = {s.y3d.frame for s in samples if s.y3d is not None}
        if len(frames2) > 1 or len(frames3) > 1:
            raise FrameError("samples mix coordinate frames")
        y3d = np.zeros((len(samples), J, 3))
        for i, s in enumerate(samples):
            if s.y3d is not None:
                y3d[i] = s.y3d.coords
        return cls(np.stack([s.y2d.coords for s in samples]), y3d,
                   np.array([s.has_3d for s in samples]),
                   np.stack([s.visibility for s in samples]),
                   np.array([s.source_tag for s in samples], dtype=object),
                   np.array([s.sample_id for s in samples], dtype=object),
                   frames2.pop(), frames3.pop() if frames3 else ROOT_CENTERED)

    def __len__(self):
        return self.y2d.shape[0]

    def take(self, idx):
        return SampleArrays(self.y2d[idx], self.y3d[idx], self.has_3d[idx], self.visibility[idx],
                            self.tags[idx], self.ids[idx], self.frame2d, self.frame3d)


@dataclass
class Batch:
    y2d: np.ndarray
    y3d: np.ndarray
    has_3d: np.ndarray
    visibility: np.ndarray
    source: np.ndarray
    tags: np.ndarray
    ids: np.ndarray = field(repr=False)

    def __len__(self):
        return self.y2d.shape[0]


def _as_arrays(source):
    return source if isinstance(source, SampleArrays) else SampleArrays.from_samples(source)


def make_batches(sources, ratio=None, batch_size=64, seed=0, drop_last=True) -> Iterator[Batch]:
    """Yield one epoch of batches mixing ``sources`` in a fixed ratio.

    Every batch holds exactly ``batch_size * r_k / sum(r)`` samples from
    source ``k``. Each source is shuffled independently (deterministic in
    ``seed``) and consumed without replacement, so the epoch ends when the
    first source runs out. With a single source and ``drop_last=False`` the
    final short batch is kept.
    """
    arrays = [_as_arrays(s) for s in sources]
    if not arrays:
        raise ValueError("no sources to batch")
    ratio = tuple(ratio) if ratio is not None else (1,) * len(arrays)
    if len(ratio) != len(arrays) or any(r <= 0 for r in ratio):
        raise ValueError("ratio needs one positive entry per source")
    shares = [batch_size * r // sum(ratio) for r in ratio]
    if batch_size <= 0 or any(batch_size * r % sum(ratio) for r in ratio):
        raise ValueError(f"batch size {batch_size} cannot be split in ratio {ratio}")
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(len(a)) for a in arrays]
    if len(arrays) == 1 and not drop_last:
        n_batches = -(-len(arrays[0]) // batch_size)
    else:
        n_batches = min(len(a) // s for a, s in zip(arrays, shares))
    for b in range(n_batches):
        parts = [a.take(p[b * s:(b + 1) * s]) for a, p, s in zip(arrays, perms, shares)]
        yield Batch(np.concatenate([p.y2d for p in parts]), np.concatenate([p.y3d for p in parts]),
                    np.concatenate([p.has_3d for p in parts]),
                    np.concatenate([p.visibility for p in parts]),
                    np.concatenate([np.full(len(p), k) for k, p in enumerate(parts)]),
                    np.concatenate([p.tags for p in parts]), np.concatenate([p.ids for p in parts]))
