"""Three-phase training of the lifter / re-projector pair, prediction and checkpoints.

Phase 1 pretrains the 2d->3d lifter on ground-truth pairs, phase 2 pretrains
the 3d->2d re-projector on ground-truth 3d input, and the joint phase
fine-tunes both end to end on the weighted objective, with samples lacking
3d ground truth contributing only the re-projection and symmetry terms.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net
from .data import Batch, SampleArrays, make_batches, root_center_samples
from .exceptions import CheckpointError, NumericalError, WeakliftError
from .losses import LossReport, LossWeights, loss_3d, loss_reproj, loss_symmetry, symmetry_per_sample, total_loss
from .net import AdamState, LayerSpec, NetworkParams
from .skeleton import (NORMALIZED, RAW, ROOT_CENTERED, NormalizationStats, Pose2D, Pose3D,
                       SkeletonTopology, default_topology, fit_normalization, root_center)

logger = logging.getLogger(__name__)

PHASES = ("lifter", "reprojector", "joint")
_PHASE_CODE = {"lifter": 1, "reprojector": 2, "joint": 3}

# dotted config key -> TrainConfig attribute
CONFIG_KEYS = {
    "loss.alpha": "alpha", "loss.beta": "beta", "loss.gamma": "gamma",
    "train.lr": "lr", "train.batch_size": "batch_size",
    "train.phase1_epochs": "phase1_epochs", "train.phase2_epochs": "phase2_epochs",
    "loss.symmetry_unit": "symmetry_unit",
    "train.joint_epochs": "joint_epochs", "train.seed": "seed", "train.mix_ratio": "mix_ratio",
    "model.hidden": "hidden", "model.dropout": "dropout", "model.batch_norm": "batch_norm",
    "model.blocks": "blocks",
}


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 1.0
    # mm per length unit of the symmetry loss; 0 means the mean 3d coordinate std
    symmetry_unit: float = 0.0
    lr: float = 1e-4
    batch_size: int = 64
    phase1_epochs: int = 50
    phase2_epochs: int = 50
    joint_epochs: int = 100
    hidden: int = 1024
    dropout: float = 0.5
    batch_norm: bool = True
    blocks: int = 2
    seed: int = 0
    mix_ratio: tuple[int, ...] = (1, 1)

    def __post_init__(self):
        LossWeights(self.alpha, self.beta, self.gamma)
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if min(self.phase1_epochs, self.phase2_epochs, self.joint_epochs) < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.symmetry_unit < 0:
            raise ValueError("symmetry_unit must be non-negative")
        if self.hidden <= 0 or self.blocks < 0:
            raise ValueError("invalid network size")
        object.__setattr__(self, "mix_ratio", tuple(int(r) for r in self.mix_ratio))

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma)

    def to_flat(self):
        out = {}
        for key, attr in CONFIG_KEYS.items():
            value = getattr(self, attr)
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_flat(cls, flat, base=None):
        base = base or cls()
        unknown = set(flat) - set(CONFIG_KEYS)
        if unknown:
            raise KeyError(f"unknown config keys {sorted(unknown)}")
        kwargs = {}
        for key, value in flat.items():
            attr = CONFIG_KEYS[key]
            default = getattr(base, attr)
            if isinstance(default, bool):
                value = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            elif isinstance(default, tuple):
                value = tuple(int(v) for v in (value.split(":") if isinstance(value, str) else value))
            else:
                value = type(default)(value)
            kwargs[attr] = value
        return dataclasses.replace(base, **kwargs)

    def hash(self):
        blob = json.dumps(self.to_flat(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ModelBundle:
    lifter: NetworkParams
    reprojector: NetworkParams
    stats2d: NormalizationStats
    stats3d: NormalizationStats
    topology: SkeletonTopology
    config: TrainConfig
    epochs: dict = field(default_factory=lambda: {p: 0 for p in PHASES})
    optimizers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lifter.output_dim != self.reprojector.input_dim:
            raise ValueError("lifter output does not feed the re-projector input")
        J = self.topology.n_joints
        if self.lifter.input_dim != 2 * J or self.lifter.output_dim != 3 * J:
            raise ValueError("lifter dimensions do not match the topology")

    def copy(self):
        return ModelBundle(self.lifter.copy(), self.reprojector.copy(), self.stats2d, self.stats3d,
                           self.topology, self.config, dict(self.epochs),
                           {k: v.copy() for k, v in self.optimizers.items()})

    def equals(self, other):
        return (self.lifter.equals(other.lifter) and self.reprojector.equals(other.reprojector)
                and self.stats2d == other.stats2d and self.stats3d == other.stats3d
                and self.topology == other.topology and self.config == other.config
                and self.epochs == other.epochs and self.optimizers.keys() == other.optimizers.keys()
                and all(self.optimizers[k].equals(other.optimizers[k]) for k in self.optimizers))

    def provenance(self):
        return {"config_hash": self.config.hash(), "epochs": dict(self.epochs),
                "lifter_arch": self.lifter.architecture_hash(),
                "reprojector_arch": self.reprojector.architecture_hash()}


def _seed(*parts):
    return np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0]


def prepare(samples, topo: SkeletonTopology) -> SampleArrays:
    """Root-center a sample list and stack it into arrays."""
    if isinstance(samples, SampleArrays):
        return samples
    return SampleArrays.from_samples(root_center_samples(samples, topo))


def create_bundle(train, config: TrainConfig, topo: SkeletonTopology | None = None,
                  extra_2d=None) -> ModelBundle:
    """Fresh networks plus normalization statistics fit on the training split.

    The 2d statistics are shared by the lifter input and the re-projector
    target; they are fit on all training 2d poses (``train`` plus
    ``extra_2d``), the 3d statistics on poses that carry 3d ground truth.
    """
    topo = topo or default_topology()
    arrays = prepare(train, topo)
    if not arrays.has_3d.any():
        raise WeakliftError("need samples with 3d ground truth to fit 3d statistics")
    all2d = arrays.y2d
    if extra_2d is not None:
        all2d = np.concatenate([all2d, prepare(extra_2d, topo).y2d])
    stats2d = fit_normalization(Pose2D(all2d, ROOT_CENTERED))
    stats3d = fit_normalization(Pose3D(arrays.y3d[arrays.has_3d], ROOT_CENTERED))
    J = topo.n_joints
    c = config
    lifter = net.build_module(2 * J, 3 * J, c.hidden, c.dropout, _seed(c.seed, 11),
                              batch_norm=c.batch_norm, n_blocks=c.blocks)
    reproj = net.build_module(3 * J, 2 * J, c.hidden, c.dropout, _seed(c.seed, 12),
                              batch_norm=c.batch_norm, n_blocks=c.blocks)
    return ModelBundle(lifter, reproj, stats2d, stats3d, topo, config)


# -- batch preparation -------------------------------------------------------------


def _inputs_2d(bundle, y2d, visibility):
    x = bundle.stats2d.apply(y2d)
    if visibility is not None and not visibility.all():
        # hidden joints are fed as the training mean
        x = x * np.repeat(visibility, 2, axis=1)
    return x


def _optimizer(bundle, key, params):
    if key not in bundle.optimizers:
        bundle.optimizers[key] = AdamState.for_params(params, bundle.config.lr)
    return bundle.optimizers[key]


class EpochLog:
    """Accumulates per-sample loss components by source over one epoch."""

    def __init__(self, phase, epoch, source_names):
        self.phase, self.epoch = phase, epoch
        self.names = list(source_names)
        self.sums = np.zeros((len(self.names), 3))
        self.counts = np.zeros(len(self.names), dtype=int)
        self.totals = []
        self.start = time.perf_counter()

    def add(self, report: LossReport, source, per_sample):
        self.totals.append(report)
        for k in range(len(self.names)):
            sel = source == k
            self.counts[k] += sel.sum()
            self.sums[k] += per_sample[sel].sum(axis=0)

    def record(self):
        n = len(self.totals)
        mean = lambda attr: float(np.mean([getattr(r, attr) for r in self.totals])) if n else 0.0
        rec = {"phase": self.phase, "epoch": self.epoch, "batches": n,
               "l3d": mean("l3d"), "l2d": mean("l2d"), "lsymm": mean("lsymm"),
               "total": mean("total"), "wall_time": time.perf_counter() - self.start,
               "per_source": {}}
        for k, name in enumerate(self.names):
            if self.counts[k]:
                avg = self.sums[k] / self.counts[k]
                rec["per_source"][name] = {"n": int(self.counts[k]), "l3d": float(avg[0]),
                                           "l2d": float(avg[1]), "lsymm": float(avg[2])}
        return rec


def _finite(value, what):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what}")


# -- training steps ------------------------------------------------------------------


def lifter_step(bundle, batch: Batch, rng):
    p = bundle.lifter
    x = _inputs_2d(bundle, batch.y2d, batch.visibility)
    target = bundle.stats3d.apply(batch.y3d)
    out, trace = net.forward(p, x, "train", rng)
    l3d, g = loss_3d(out, target)
    _finite(l3d, "3d loss")
    grads, _ = net.backward(p, trace, g)
    net.adam_step(p, grads, _optimizer(bundle, "lifter", p))
    per = np.zeros((len(batch), 3))
    per[:, 0] = ((out - target) ** 2).sum(axis=1)
    return LossReport(l3d, 0.0, 0.0, l3d, len(batch), 1.0, 0.0, 0.0), per


def reprojector_step(bundle, batch: Batch, rng):
    p = bundle.reprojector
    x = bundle.stats3d.apply(batch.y3d)
    target = bundle.stats2d.apply(batch.y2d)
    out, trace = net.forward(p, x, "train", rng)
    l2d, g = loss_reproj(out, target, batch.visibility)
    _finite(l2d, "re-projection loss")
    grads, _ = net.backward(p, trace, g)
    net.adam_step(p, grads, _optimizer(bundle, "reprojector", p))
    per = np.zeros((len(batch), 3))
    per[:, 1] = (((out - target) * np.repeat(batch.visibility, 2, axis=1)) ** 2).sum(axis=1)
    return LossReport(0.0, l2d, 0.0, l2d, len(batch), 0.0, 1.0, 0.0), per


def symmetry_unit(bundle):
    """Length unit (mm) in which the symmetry loss measures bone lengths.

    A single isotropic scale keeps the loss a pure bone-length comparison
    while bringing it to the magnitude of the standardized 3d and 2d terms.
    """
    unit = bundle.config.symmetry_unit
    return unit if unit > 0 else float(bundle.stats3d.std.mean())


def joint_objective(bundle, batch: Batch, rng=None, masks=None, update_stats=True):
    """Forward and backward pass of the full weighted objective on one batch.

    Returns ``(report, per_sample, lifter_grads, reprojector_grads, traces)``.
    ``per_sample`` has columns (gated l3d, l2d, lsymm) per sample; samples
    without 3d ground truth have an l3d entry of exactly zero.
    """
    w = bundle.config.weights
    topo = bundle.topology
    root = topo.root_index
    J = topo.n_joints
    x2 = _inputs_2d(bundle, batch.y2d, batch.visibility)
    target2 = bundle.stats2d.apply(batch.y2d)
    target3 = bundle.stats3d.apply(batch.y3d)
    gate = batch.has_3d.astype(np.float64)
    lift_masks = reproj_masks = None
    if masks is not None:
        lift_masks, reproj_masks = masks
    pred3, lift_trace = net.forward(bundle.lifter, x2, "train", rng, lift_masks, update_stats)
    reproj, reproj_trace = net.forward(bundle.reprojector, pred3, "train", rng, reproj_masks,
                                       update_stats)
    l3d, g3 = loss_3d(pred3, target3, sample_weight=gate)
    l2d, g2 = loss_reproj(reproj, target2, batch.visibility)
    unit = symmetry_unit(bundle)
    metric = bundle.stats3d.invert(pred3) / unit
    metric[:, root] = 0.0
    lsym, gs = loss_symmetry(metric, topo)
    gs[:, root] = 0.0
    report = total_loss(l3d, l2d, lsym, w, has_3d_gt=bool(gate.any()), batch_size=len(batch))
    _finite(report.total, "total loss")
    g_reproj_out = w.beta * g2
    reproj_grads, g_pred_from_2d = net.backward(bundle.reprojector, reproj_trace, g_reproj_out)
    g_pred = (report.alpha * g3 + g_pred_from_2d
              + w.gamma * gs.reshape(len(batch), 3 * J) * (bundle.stats3d.std / unit))
    lifter_grads, _ = net.backward(bundle.lifter, lift_trace, g_pred)
    per = np.empty((len(batch), 3))
    per[:, 0] = gate * ((pred3 - target3) ** 2).sum(axis=1)
    per[:, 1] = (((reproj - target2) * np.repeat(batch.visibility, 2, axis=1)) ** 2).sum(axis=1)
    per[:, 2] = symmetry_per_sample(metric, topo)[0]
    return report, per, lifter_grads, reproj_grads, (lift_trace, reproj_trace)


def joint_step(bundle, batch: Batch, rng, freeze=()):
    report, per, lg, rg, _ = joint_objective(bundle, batch, rng)
    if "lifter" not in freeze:
        net.adam_step(bundle.lifter, lg, _optimizer(bundle, "joint_lifter", bundle.lifter))
    if "reprojector" not in freeze:
        net.adam_step(bundle.reprojector, rg,
                      _optimizer(bundle, "joint_reprojector", bundle.reprojector))
    return report, per


# -- phases ---------------------------------------------------------------------------


def _run_phase(bundle, phase, sources, names, epochs, step, ratio=None, log=None,
               on_epoch=None, step_log=None):
    c = bundle.config
    target = bundle.epochs[phase] + epochs if epochs is not None else None
    while bundle.epochs[phase] < target:
        epoch = bundle.epochs[phase]
        seed = _seed(c.seed, _PHASE_CODE[phase], epoch)
        rng = np.random.default_rng(_seed(c.seed, _PHASE_CODE[phase], epoch, 1))
        elog = EpochLog(phase, epoch + 1, names)
        for batch in make_batches(sources, ratio, c.batch_size, seed):
            report, per = step(bundle, batch, rng)
            elog.add(report, batch.source, per)
            if step_log is not None:
                step_log.append((report, per, batch.has_3d.copy()))
        if not elog.totals:
            raise WeakliftError(f"{phase} phase produced no full batch of {c.batch_size}")
        bundle.epochs[phase] = epoch + 1
        rec = elog.record()
        logger.debug("%s epoch %d: total %.6g", phase, epoch + 1, rec["total"])
        if log is not None:
            log(rec)
        if on_epoch is not None:
            on_epoch(bundle)
    return bundle


def _require_3d(arrays, phase):
    if not arrays.has_3d.all():
        missing = int((~arrays.has_3d).sum())
        raise WeakliftError(f"{phase} pretraining needs 3d ground truth; {missing} samples lack it")


def train_phase_lifter(bundle, data, config=None, epochs=None, log=None, on_epoch=None,
                       step_log=None):
    """Supervised pretraining of the lifter on (2d, 3d) pairs."""
    if config is not None:
        bundle.config = config
    arrays = prepare(data, bundle.topology)
    _require_3d(arrays, "lifter")
    remaining = bundle.config.phase1_epochs - bundle.epochs["lifter"] if epochs is None else epochs
    return _run_phase(bundle, "lifter", [arrays], ["labeled"], max(remaining, 0), lifter_step,
                      log=log, on_epoch=on_epoch, step_log=step_log)


def train_phase_reprojector(bundle, data, config=None, epochs=None, log=None, on_epoch=None,
                            step_log=None):
    """Pretraining of the re-projector from ground-truth 3d to the paired 2d."""
    if config is not None:
        bundle.config = config
    arrays = prepare(data, bundle.topology)
    _require_3d(arrays, "re-projector")
    remaining = bundle.config.phase2_epochs - bundle.epochs["reprojector"] if epochs is None else epochs
    return _run_phase(bundle, "reprojector", [arrays], ["labeled"], max(remaining, 0),
                      reprojector_step, log=log, on_epoch=on_epoch, step_log=step_log)


def train_joint(bundle, labeled, unlabeled=None, config=None, epochs=None, log=None,
                on_epoch=None, step_log=None, freeze=()):
    """End-to-end fine-tuning of both modules on the weighted objective.

    With ``unlabeled`` (2d-only samples) given, every batch mixes the two
    sources in ``config.mix_ratio``. Optimizer moments start fresh when the
    phase starts from epoch 0.
    """
    if config is not None:
        bundle.config = config
    if bundle.epochs["joint"] == 0:
        bundle.optimizers.pop("joint_lifter", None)
        bundle.optimizers.pop("joint_reprojector", None)
    sources = [prepare(labeled, bundle.topology)]
    names = ["labeled"]
    ratio = None
    if unlabeled is not None and len(unlabeled):
        sources.append(prepare(unlabeled, bundle.topology))
        names.append("unlabeled")
        ratio = bundle.config.mix_ratio
    remaining = bundle.config.joint_epochs - bundle.epochs["joint"] if epochs is None else epochs
    step = lambda b, batch, rng: joint_step(b, batch, rng, freeze)
    return _run_phase(bundle, "joint", sources, names, max(remaining, 0), step, ratio, log,
                      on_epoch, step_log)


def fit(bundle, labeled, unlabeled=None, log=None, checkpoint=None):
    """Run whatever remains of the three-phase schedule.

    When ``checkpoint`` is a path the bundle is saved after every epoch, so
    an interrupted run can be resumed by loading it and calling ``fit``
    again with the same data.
    """
    on_epoch = (lambda b: save_checkpoint(b, checkpoint)) if checkpoint is not None else None
    labeled = prepare(labeled, bundle.topology)
    unlabeled = prepare(unlabeled, bundle.topology) if unlabeled is not None else None
    train_phase_lifter(bundle, labeled, log=log, on_epoch=on_epoch)
    train_phase_reprojector(bundle, labeled, log=log, on_epoch=on_epoch)
    train_joint(bundle, labeled, unlabeled, log=log, on_epoch=on_epoch)
    return bundle


# -- inference -----------------------------------------------------------------------------


def predict_arrays(bundle, y2d, visibility=None):
    """Batch prediction on root-centered 2d arrays (N, J, 2).

    Returns root-relative 3d poses in mm and their learned 2d re-projection
    (root-centered, input units).
    """
    y2d = np.asarray(y2d, dtype=np.float64)
    if not np.all(np.isfinite(y2d)):
        raise NumericalError("non-finite 2d input")
    x = _inputs_2d(bundle, y2d, None if visibility is None else np.asarray(visibility, dtype=bool))
    pred3, _ = net.forward(bundle.lifter, x, "eval")
    metric = bundle.stats3d.invert(pred3)
    metric[:, bundle.topology.root_index] = 0.0
    reproj, _ = net.forward(bundle.reprojector, pred3, "eval")
    reproj2d = bundle.stats2d.invert(reproj)
    return metric, reproj2d


def predict(bundle, y2d: Pose2D, visibility=None):
    """Lift a raw (or root-centered) 2d pose or batch of poses to 3d."""
    if y2d.frame == NORMALIZED:
        raise ValueError("predict expects a raw 2d pose")
    rc = root_center(y2d, bundle.topology)
    batch = rc.coords.reshape(-1, rc.n_joints, 2)
    vis = None if visibility is None else np.asarray(visibility, dtype=bool).reshape(len(batch), -1)
    p3, r2 = predict_arrays(bundle, batch, vis)
    if not y2d.is_batch:
        p3, r2 = p3[0], r2[0]
    return Pose3D(p3, ROOT_CENTERED), Pose2D(r2, ROOT_CENTERED)


# -- checkpoints ------------------------------------------------------------------------------

MAGIC = b"WEAKLIFT"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _module_header(params: NetworkParams):
    return {"layers": [dataclasses.asdict(l) for l in params.layers], "metadata": params.metadata,
            "weights": [[k, list(v.shape)] for k, v in params.weights.items()],
            "buffers": [[k, list(v.shape)] for k, v in params.buffers.items()]}


def _bundle_blocks(bundle):
    """Header description and the ordered list of arrays to serialize."""
    blocks = []
    header = {"topology": bundle.topology.to_text(), "config": bundle.config.to_flat(),
              "epochs": bundle.epochs, "provenance": bundle.provenance(), "modules": {},
              "stats": {}, "optimizers": {}}
    for name in ("lifter", "reprojector"):
        params = getattr(bundle, name)
        header["modules"][name] = _module_header(params)
        blocks += list(params.weights.values()) + list(params.buffers.values())
    for name in ("stats2d", "stats3d"):
        s = getattr(bundle, name)
        header["stats"][name] = {"n_joints": s.n_joints, "dim": s.dim}
        blocks += [s.mean, s.std]
    for key in sorted(bundle.optimizers):
        st = bundle.optimizers[key]
        header["optimizers"][key] = {"step": st.step, "lr": st.learning_rate, "beta1": st.beta1,
                                     "beta2": st.beta2, "eps": st.eps,
                                     "shapes": [[k, list(v.shape)] for k, v in st.m.items()]}
        blocks += list(st.m.values()) + list(st.v.values())
    return header, blocks


def _bundle_from_blocks(header, arrays):
    it = iter(arrays)
    modules = {}
    for name in ("lifter", "reprojector"):
        h = header["modules"][name]
        layers = [LayerSpec(**l) for l in h["layers"]]
        weights = {k: next(it) for k, _ in h["weights"]}
        buffers = {k: next(it) for k, _ in h["buffers"]}
        modules[name] = NetworkParams(layers, weights, buffers, h["metadata"])
    stats = {}
    for name in ("stats2d", "stats3d"):
        h = header["stats"][name]
        stats[name] = NormalizationStats(next(it), next(it), h["n_joints"], h["dim"])
    optimizers = {}
    for key, h in header["optimizers"].items():
        names = [k for k, _ in h["shapes"]]
        m = {k: next(it) for k in names}
        v = {k: next(it) for k in names}
        optimizers[key] = AdamState(m, v, h["step"], h["lr"], h["beta1"], h["beta2"], h["eps"])
    topo = SkeletonTopology.from_text(header["topology"])
    return ModelBundle(modules["lifter"], modules["reprojector"], stats["stats2d"],
                       stats["stats3d"], topo, TrainConfig.from_flat(header["config"]),
                       dict(header["epochs"]), optimizers)


def _shapes(header):
    shapes = []
    for name in ("lifter", "reprojector"):
        h = header["modules"][name]
        shapes += [s for _, s in h["weights"]] + [s for _, s in h["buffers"]]
    for name in ("stats2d", "stats3d"):
        h = header["stats"][name]
        shapes += [[h["n_joints"] * h["dim"]]] * 2
    for key, h in header["optimizers"].items():
        shapes += [s for _, s in h["shapes"]] * 2
    return shapes


def save_checkpoint(bundle: ModelBundle, path):
    """Write the binary checkpoint.

    Layout: 8-byte magic ``WEAKLIFT``, uint32 version, uint64 header length,
    UTF-8 JSON header, then every array as little-endian float64 in header
    order, then a uint32 CRC-32 of all preceding bytes. Writes go through a
    temporary file so an interrupted save never clobbers the previous one.
    """
    header, blocks = _bundle_blocks(bundle)
    head = json.dumps(header, sort_keys=True).encode()
    parts = [_PREFIX.pack(MAGIC, CHECKPOINT_VERSION, len(head)), head]
    parts += [np.ascontiguousarray(b, dtype="<f8").tobytes() for b in blocks]
    body = b"".join(parts)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


def load_checkpoint(path) -> ModelBundle:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size + 4:
        raise CheckpointError("checkpoint truncated")
    magic, version, head_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError("not a weaklift checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint corrupt or truncated (checksum mismatch)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + head_len])
    except ValueError as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    offset = start + head_len
    arrays = []
    for shape in _shapes(header):
        n = int(np.prod(shape))
        chunk = body[offset:offset + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError("checkpoint truncated")
        arrays.append(np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape))
        offset += 8 * n
    if offset != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return _bundle_from_blocks(header, arrays)


def export_text(bundle: ModelBundle, path):
    """Lossless JSON dump of a bundle for inspection and diffing."""
    header, blocks = _bundle_blocks(bundle)
    header["version"] = CHECKPOINT_VERSION
    header["arrays"] = [b.reshape(-1).tolist() for b in blocks]
    Path(path).write_text(json.dumps(header, sort_keys=True, indent=1))


def import_text(path) -> ModelBundle:
    header = json.loads(Path(path).read_text())
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"text export version {header.get('version')} unsupported")
    arrays = [np.array(a, dtype=np.float64).reshape(s)
              for a, s in zip(header.pop("arrays"), _shapes(header))]
    return _bundle_from_blocks(header, arrays)
