"""Command-line interface: ``weaklift {synth,train,eval,predict,plot}``.

Exit status is 0 on success, 2 for usage or configuration errors, 3 for data
errors (unreadable or inconsistent files) and 4 for numerical failures.
Diagnostics go to stderr; results go to files and stdout.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import svg
from .data import CameraModel, Sample, drop_3d, generate_synthetic, load_poses, save_poses
from .exceptions import NumericalError, WeakliftError
from .metrics import AUC_GRID, PCK_THRESHOLD, evaluate, pelvis_adjust, retarget
from .pipeline import (CONFIG_KEYS, TrainConfig, _seed, create_bundle, fit, load_checkpoint,
                       predict_arrays, prepare, save_checkpoint)
from .skeleton import ROOT_CENTERED, Pose2D, Pose3D, bone_lengths, default_topology

logger = logging.getLogger("weaklift")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

CAMERA_KEYS = {"camera.kind": "kind", "camera.focal": "focal", "camera.principal": "principal",
               "camera.distance": "distance", "camera.distance_jitter": "distance_jitter",
               "camera.elevation_deg": "elevation_deg"}
SPLITS = ("train", "val", "test")
SCHEDULE_KEYS = {"train.phase1_epochs", "train.phase2_epochs", "train.joint_epochs"}


class UsageError(Exception):
    pass


# -- configuration ---------------------------------------------------------------------


def _flatten(tree, prefix=""):
    out = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _parse_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def explicit_settings(path=None, overrides=(), flags=None):
    """Flat dict of every key set by a YAML file, ``key=value`` overrides or flags.

    Later sources win: file < overrides < flags. Unknown keys are rejected.
    """
    flat = {}
    if path is not None:
        try:
            tree = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise UsageError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(tree, dict):
            raise UsageError(f"config {path} must be a mapping of dotted keys")
        flat.update(_flatten(tree))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} is not of the form key=value")
        flat[key.strip()] = _parse_value(value)
    flat.update({k: v for k, v in (flags or {}).items() if v is not None})
    unknown = set(flat) - set(CONFIG_KEYS) - set(CAMERA_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}; "
                         f"known keys are {', '.join(sorted({**CONFIG_KEYS, **CAMERA_KEYS}))}")
    return flat


def load_config(path=None, overrides=(), flags=None, base=None):
    """Merge defaults (or ``base``), a YAML file, ``key=value`` overrides and flags, in that order.

    Returns ``(TrainConfig, camera dict)``.
    """
    flat = {**(base or {}), **explicit_settings(path, overrides, flags)}
    try:
        config = TrainConfig.from_flat({k: v for k, v in flat.items() if k in CONFIG_KEYS})
        camera = {CAMERA_KEYS[k]: v for k, v in flat.items() if k in CAMERA_KEYS}
        if "principal" in camera:
            camera["principal"] = tuple(float(v) for v in camera["principal"])
        CameraModel(**camera)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return config, camera


def effective_config(config, camera):
    out = config.to_flat()
    cam = dataclasses.asdict(CameraModel(**camera))
    out.update({k: (list(cam[a]) if isinstance(cam[a], tuple) else cam[a]) for k, a in CAMERA_KEYS.items()})
    return out


# -- subcommands --------------------------------------------------------------------------


def split_seeds(seed):
    seeds = {name: int(_seed(seed, 100 + k)) for k, name in enumerate(SPLITS + ("unlabeled",))}
    if len(set(seeds.values())) != len(seeds):
        raise UsageError("split seeds collide; choose another --seed")
    return seeds


def cmd_synth(args):
    config, camera = load_config(args.config, args.set, {"train.seed": args.seed})
    cam = CameraModel(**camera)
    counts = {"train": args.train, "val": args.val, "test": args.test, "unlabeled": args.unlabeled}
    if any(c < 0 for c in counts.values()):
        raise UsageError("sample counts must be non-negative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = split_seeds(config.seed)
    meta = {"config": effective_config(config, camera)}
    for name, count in counts.items():
        if count == 0:
            continue
        samples = generate_synthetic(count, seeds[name], cam, source_tag=args.tag)
        if name == "unlabeled":
            samples = drop_3d(samples)
        save_poses(samples, out / f"{name}.jsonl", meta={**meta, "split": name, "seed": seeds[name]})
        print(f"{name}: {count} samples -> {out / f'{name}.jsonl'}")
    return EXIT_OK


def _train_flags(args):
    return {"train.phase1_epochs": args.phase1_epochs, "train.phase2_epochs": args.phase2_epochs,
            "train.joint_epochs": args.joint_epochs, "train.lr": args.lr,
            "train.batch_size": args.batch, "loss.alpha": args.alpha, "loss.beta": args.beta,
            "loss.gamma": args.gamma, "model.hidden": args.hidden, "train.seed": args.seed}


def cmd_train(args):
    config, camera = load_config(args.config, args.set, _train_flags(args))
    topo = default_topology()
    labeled = load_poses(args.train, topo)
    missing = sum(not s.has_3d for s in labeled)
    if missing:
        raise WeakliftError(f"{args.train}: {missing} samples lack 3d ground truth; "
                            "supervised pretraining needs 3d for every sample "
                            "(pass 2d-only data with --unlabeled)")
    unlabeled = load_poses(args.unlabeled, topo) if args.unlabeled else None
    ckpt = Path(args.out)
    if args.resume and ckpt.exists():
        bundle = load_checkpoint(ckpt)
        if bundle.topology != topo:
            raise WeakliftError("checkpoint topology does not match the data")
        # explicit settings may extend the schedule, but not change the model or the run
        previous = bundle.config.to_flat()
        bundle.config, _ = load_config(args.config, args.set, _train_flags(args), base=previous)
        changed = sorted(k for k, v in bundle.config.to_flat().items()
                         if v != previous[k] and k not in SCHEDULE_KEYS)
        if changed:
            raise UsageError(f"--resume cannot change {', '.join(changed)} of the checkpoint")
        logger.info("resuming from %s at epochs %s", ckpt, bundle.epochs)
    else:
        bundle = create_bundle(labeled, config, topo, extra_2d=unlabeled)
    header = {"kind": "header", "config": effective_config(bundle.config, camera),
              "provenance": bundle.provenance(), "train": str(args.train),
              "unlabeled": str(args.unlabeled) if args.unlabeled else None}
    print(json.dumps(header, sort_keys=True))
    log_path = Path(args.log) if args.log else ckpt.with_suffix(".log.jsonl")
    kept = [header]
    if args.resume and log_path.exists():
        # drop records of epochs that finished after the last checkpoint was written
        kept = [r for r in map(json.loads, log_path.read_text().splitlines())
                if r.get("kind") != "epoch" or r["epoch"] <= bundle.epochs[r["phase"]]]
    with open(log_path, "w") as fh:
        fh.write("".join(json.dumps(r, sort_keys=True) + "\n" for r in kept))

        def log(rec):
            fh.write(json.dumps({"kind": "epoch", **rec}, sort_keys=True) + "\n")
            fh.flush()
            logger.info("%s epoch %d  total %.5g  l3d %.5g  l2d %.5g  lsymm %.5g", rec["phase"],
                        rec["epoch"], rec["total"], rec["l3d"], rec["l2d"], rec["lsymm"])

        fit(bundle, labeled, unlabeled, log=log, checkpoint=ckpt)
    save_checkpoint(bundle, ckpt)
    print(json.dumps({"kind": "done", "checkpoint": str(ckpt), "log": str(log_path),
                      "epochs": bundle.epochs}, sort_keys=True))
    return EXIT_OK


def _stack(samples, attr):
    poses = [getattr(s, attr) for s in samples]
    if any(p is None for p in poses):
        raise WeakliftError(f"every sample needs {attr}")
    frames = {p.frame for p in poses}
    return np.stack([p.coords for p in poses]), frames.pop() if len(frames) == 1 else None


def _root_relative(coords, topo):
    return coords - coords[:, topo.root_index:topo.root_index + 1]


def cmd_eval(args):
    if args.threshold <= 0:
        raise UsageError("--pck-threshold must be positive")
    if (args.model is None) == (args.predictions is None):
        raise UsageError("give exactly one of --model or --predictions")
    bundle = load_checkpoint(args.model) if args.model else None
    topo = bundle.topology if bundle else default_topology()
    data = load_poses(args.data, topo)
    gt, _ = _stack(data, "y3d")
    gt = _root_relative(gt, topo)
    if bundle is not None:
        arrays = prepare(data, topo)
        pred = predict_arrays(bundle, arrays.y2d, arrays.visibility)[0]
        meta = {"model": str(args.model), "config": bundle.config.to_flat(),
                "provenance": bundle.provenance()}
    else:
        predicted = load_poses(args.predictions, topo)
        if [s.sample_id for s in predicted] != [s.sample_id for s in data]:
            raise WeakliftError("prediction ids do not match the ground-truth ids")
        pred = _root_relative(_stack(predicted, "y3d")[0], topo)
        meta = {"predictions": str(args.predictions)}
    if args.retarget:
        pred = retarget(pred, bone_lengths(gt, topo), topo)
    if args.pelvis_adjust is not None:
        pred = pelvis_adjust(pred, topo, args.pelvis_adjust)
    tags = [s.source_tag for s in data]
    report = evaluate(pred, gt, tags if any(tags) else None, topo, args.threshold, AUC_GRID)
    meta.update({"data": str(args.data), "pck_threshold": args.threshold,
                 "retarget": args.retarget, "pelvis_adjust": args.pelvis_adjust})
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_jsonl(meta))
    return EXIT_OK


def cmd_predict(args):
    bundle = load_checkpoint(args.model)
    topo = bundle.topology
    samples = load_poses(args.input, topo)
    arrays = prepare(samples, topo)
    pred, reproj = predict_arrays(bundle, arrays.y2d, arrays.visibility)
    vis = np.repeat(arrays.visibility[..., None], 2, axis=2)
    residual = np.linalg.norm((reproj - arrays.y2d) * vis, axis=-1).sum() / max(vis[..., 0].sum(), 1)
    meta = {"model": str(args.model), "input": str(args.input), "config": bundle.config.to_flat(),
            "provenance": bundle.provenance()}
    out = [Sample(s.y2d, Pose3D(p, ROOT_CENTERED), s.visibility, s.source_tag, s.sample_id)
           for s, p in zip(samples, pred)]
    save_poses(out, args.out, topo, meta=meta)
    if args.reprojection:
        rep = [Sample(Pose2D(r, ROOT_CENTERED), None, s.visibility, s.source_tag, s.sample_id)
               for s, r in zip(samples, reproj)]
        save_poses(rep, args.reprojection, topo, meta=meta)
    print(json.dumps({"kind": "predict", "n": len(samples), "out": str(args.out),
                      "mean_reprojection_residual": float(residual)}, sort_keys=True))
    return EXIT_OK


def read_log(path):
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            if rec.get("kind") == "epoch":
                records.append(rec)
    if not records:
        raise WeakliftError(f"{path}: log has no epoch records")
    return records


def cmd_plot(args):
    if (args.log is None) == (args.poses is None):
        raise UsageError("give exactly one of --log or --poses")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.log:
        records = read_log(args.log)
        for component in ("l3d", "l2d", "lsymm", "total"):
            series = {}
            for step, rec in enumerate(records, start=1):
                xs, ys = series.setdefault(rec["phase"], ([], []))
                xs.append(step)
                ys.append(rec[component])
            path = out / f"loss_{component}.svg"
            path.write_text(svg.line_chart(series, f"{component} per epoch", "epoch", component))
            written.append(path)
    else:
        topo = default_topology()
        samples = load_poses(args.poses, topo)[: args.limit]
        if not samples:
            raise WeakliftError(f"{args.poses}: no poses")
        for k, s in enumerate(samples):
            pose = s.y3d if s.y3d is not None else s.y2d
            path = out / f"pose_{k:04d}.svg"
            path.write_text(svg.skeleton(pose.coords, topo.bones, s.sample_id or f"pose {k}"))
            written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of dotted keys, e.g. 'train.lr: 1e-4'")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="weaklift", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic pose files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train", type=int, default=5000)
    p.add_argument("--val", type=int, default=500)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--unlabeled", type=int, default=0, help="extra 2d-only samples")
    p.add_argument("--tag", default="synth", help="source tag prefix")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="run the three training phases")
    p.add_argument("--train", required=True, help="pose file with 2d and 3d")
    p.add_argument("--unlabeled", help="pose file with 2d-only samples")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch JSONL log (default: next to the checkpoint)")
    p.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    d = TrainConfig()
    p.add_argument("--phase1-epochs", type=int, help=f"lifter pretraining epochs ({d.phase1_epochs})")
    p.add_argument("--phase2-epochs", type=int,
                   help=f"re-projector pretraining epochs ({d.phase2_epochs})")
    p.add_argument("--joint-epochs", type=int, help=f"joint fine-tuning epochs ({d.joint_epochs})")
    p.add_argument("--lr", type=float, help=f"Adam learning rate ({d.lr:g})")
    p.add_argument("--batch", type=int, help=f"batch size ({d.batch_size})")
    p.add_argument("--alpha", type=float, help=f"3d loss weight ({d.alpha})")
    p.add_argument("--beta", type=float, help=f"re-projection loss weight ({d.beta})")
    p.add_argument("--gamma", type=float, help=f"symmetry loss weight ({d.gamma})")
    p.add_argument("--hidden", type=int, help=f"hidden width ({d.hidden})")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="MPJE / PCK / AUC on labeled data")
    p.add_argument("--data", required=True, help="pose file with 3d ground truth")
    p.add_argument("--model", help="checkpoint to predict with")
    p.add_argument("--predictions", help="pose file of predictions (instead of --model)")
    p.add_argument("--pck-threshold", dest="threshold", type=float, default=PCK_THRESHOLD)
    p.add_argument("--retarget", action="store_true",
                   help="rescale predicted bones to the ground-truth lengths")
    p.add_argument("--pelvis-adjust", type=float, nargs="?", const=0.2, default=None,
                   metavar="RATIO", help="move pelvis and hips toward the neck (default 0.2)")
    p.add_argument("--out", help="JSONL report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="lift a 2d pose file to 3d")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reprojection", help="also write the re-projected 2d poses here")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", parents=[common], help="SVG loss curves or skeleton renders")
    p.add_argument("--log", help="training log (JSONL)")
    p.add_argument("--poses", help="pose file to render")
    p.add_argument("--limit", type=int, default=10, help="poses to render")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"weaklift {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"weaklift {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (WeakliftError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"weaklift {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
