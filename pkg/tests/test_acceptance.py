"""Acceptance gate: one PASS/FAIL line per criterion, collected in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as they
are produced. The end-to-end and ablation criteria train real models and take
several minutes on a desktop CPU.
"""
import dataclasses
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from helpers import joint_gradient_error, record, tiny_config, tiny_data
from oracles import auc_loop, mpje_loop, pck_loop
from weaklift import net
from weaklift.data import CameraModel, drop_3d, generate_synthetic
from weaklift.losses import loss_3d, loss_reproj, loss_symmetry
from weaklift.metrics import AUC_GRID, PCK_THRESHOLD, auc, mpje, pck, pelvis_adjust, retarget
from weaklift.pipeline import (TrainConfig, create_bundle, fit, load_checkpoint, predict_arrays, prepare,
                               save_checkpoint, train_joint, train_phase_lifter, train_phase_reprojector)
from weaklift.skeleton import bone_lengths, bone_vectors, default_topology

TOPO = default_topology()


def test_1_gradient_correctness():
    start = time.perf_counter()
    configs = [(H, B, seed) for H in (4, 8) for B in (2, 4) for seed in range(5)]
    results = [joint_gradient_error(H, B, seed) for H, B, seed in configs]
    elapsed = time.perf_counter() - start
    worst = max(r[0] for r in results)
    passed = worst < 1e-4 and elapsed < 60.0
    record(1, "gradient check", passed,
           f"{len(configs)} configs, worst relative error {worst:.2e} (< 1e-4), {elapsed:.1f} s (< 60 s)")
    assert passed


def test_2_loss_identities():
    start = time.perf_counter()
    failures = {"loss_3d": 0, "loss_reproj": 0, "loss_symmetry": 0}
    cases = 1000
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        a3, b3 = rng.normal(scale=300.0, size=(2, n, 17, 3))
        a2, b2 = rng.normal(scale=200.0, size=(2, n, 17, 2))
        vis = rng.integers(0, 2, size=(n, 17))
        if not (loss_3d(a3, a3)[0] == 0.0 and loss_3d(a3, b3)[0] >= 0.0):
            failures["loss_3d"] += 1
        noisy = a2 + np.where(vis[..., None] == 0, rng.normal(scale=1e3, size=a2.shape), 0.0)
        if not (loss_reproj(a2, a2, vis)[0] == 0.0 and loss_reproj(a2, b2, vis)[0] >= 0.0
                and loss_reproj(noisy, b2, vis)[0] == loss_reproj(a2, b2, vis)[0]):
            failures["loss_reproj"] += 1
        sym = loss_symmetry(a3, TOPO)[0]
        moved = a3 @ Rotation.random(random_state=seed).as_matrix().T + rng.normal(scale=1e3, size=3)
        mirrored = generate_synthetic(1, seed)[0].y3d.coords
        if not (sym >= 0.0 and abs(loss_symmetry(moved, TOPO)[0] - sym) <= 1e-8 * max(sym, 1.0)
                and loss_symmetry(mirrored, TOPO)[0] < 1e-12):
            failures["loss_symmetry"] += 1
    elapsed = time.perf_counter() - start
    passed = not any(failures.values())
    record(2, "loss identities", passed,
           f"{cases} cases per loss, failures {failures}, {elapsed:.1f} s")
    assert passed


def test_3_overfit():
    start = time.perf_counter()
    samples = generate_synthetic(8, 0)
    # unregularized, so the check isolates optimization from dropout noise
    cfg = TrainConfig(hidden=64, batch_size=8, phase1_epochs=500, dropout=0.0, lr=1e-3)
    b = create_bundle(samples, cfg)
    arrays = prepare(samples, b.topology)
    x, y = b.stats2d.apply(arrays.y2d), b.stats3d.apply(arrays.y3d)
    initial = loss_3d(net.forward(b.lifter, x)[0], y)[0]
    train_phase_lifter(b, arrays)
    final = loss_3d(net.forward(b.lifter, x)[0], y)[0]
    elapsed = time.perf_counter() - start
    passed = final < 0.01 * initial and elapsed < 120.0
    record(3, "overfit 8 samples", passed,
           f"training l3d {initial:.4g} -> {final:.3g} ({final / initial:.2e} of initial, < 1e-2), "
           f"{elapsed:.1f} s")
    assert passed


def test_4_end_to_end_synthetic():
    start = time.perf_counter()
    train = generate_synthetic(5000, 41)
    test = prepare(generate_synthetic(1000, 42), TOPO)
    b = create_bundle(train, TrainConfig(hidden=256, seed=0))
    fit(b, train)
    pred, _ = predict_arrays(b, test.y2d, test.visibility)
    model = mpje(pred, test.y3d)
    zero = mpje(np.zeros_like(test.y3d), test.y3d)
    mean_pose = prepare(train, TOPO).y3d.mean(axis=0)
    mean = mpje(np.broadcast_to(mean_pose, test.y3d.shape), test.y3d)
    elapsed = time.perf_counter() - start
    passed = model <= 0.5 * zero and model <= 0.5 * mean
    record(4, "end-to-end synthetic", passed,
           f"test MPJE {model:.1f} mm vs zero-pose {zero:.1f} ({model / zero:.0%}) and mean-pose "
           f"{mean:.1f} ({model / mean:.0%}), need <= 50%; {elapsed / 60:.1f} min")
    assert passed


ABLATION_ARMS = {"supervised": dict(beta=0.0, gamma=0.0), "+reprojection": dict(gamma=0.0),
                 "+reprojection+symmetry": dict()}


def ablation_seed(seed):
    """PCK@150 of the three ablation arms for one seed.

    Training 3d comes from the default camera; 2d-only training samples and
    the test split come from a camera raised 15 degrees. All arms share the
    pretrained modules and differ only in the joint phase.
    """
    other = CameraModel(elevation_deg=15.0)
    labeled = generate_synthetic(1000, 500 + seed)
    unlabeled = drop_3d(generate_synthetic(1000, 600 + seed, other, source_tag="wild"))
    test = prepare(generate_synthetic(1000, 700 + seed, other, source_tag="wild"), TOPO)
    config = TrainConfig(hidden=256, lr=1e-3, phase1_epochs=20, phase2_epochs=20, joint_epochs=20,
                         seed=seed)
    pretrained = create_bundle(labeled, config, extra_2d=unlabeled)
    train_phase_lifter(pretrained, labeled)
    train_phase_reprojector(pretrained, labeled)
    scores = {}
    for arm, weights in ABLATION_ARMS.items():
        b = pretrained.copy()
        train_joint(b, labeled, unlabeled if weights.get("beta", 0.5) > 0 else None,
                    config=dataclasses.replace(config, **weights))
        scores[arm] = pck(predict_arrays(b, test.y2d)[0], test.y3d)
    return scores


def test_5_ablation_trend():
    start = time.perf_counter()
    per_seed = [ablation_seed(seed) for seed in range(3)]
    mean = {arm: float(np.mean([s[arm] for s in per_seed])) for arm in ABLATION_ARMS}
    sup, rep, full = mean.values()
    passed = sup <= rep <= full and full > sup
    record(5, "ablation trend", passed,
           "mean PCK@150 " + " / ".join(f"{arm} {v:.2f}" for arm, v in mean.items())
           + f" over 3 seeds, need non-decreasing with full > supervised; "
           f"{(time.perf_counter() - start) / 60:.1f} min")
    assert passed


def test_6_weighting_conformance():
    labeled, unlabeled = tiny_data(32, 32, seed=6)
    config = tiny_config(alpha=0.5, beta=0.5, gamma=1.0)
    b = create_bundle(labeled, config, extra_2d=unlabeled)
    train_phase_lifter(b, labeled)
    train_phase_reprojector(b, labeled)
    steps, epochs = [], []
    train_joint(b, labeled, unlabeled, log=epochs.append, step_log=steps)
    w = (b.config.alpha, b.config.beta, b.config.gamma)
    worst = 0.0
    for report, _, _ in steps:
        recomposed = w[0] * report.l3d + w[1] * report.l2d + w[2] * report.lsymm
        worst = max(worst, abs(recomposed - report.total) / max(abs(report.total), 1e-300))
    for rec in epochs:
        recomposed = w[0] * rec["l3d"] + w[1] * rec["l2d"] + w[2] * rec["lsymm"]
        worst = max(worst, abs(recomposed - rec["total"]) / abs(rec["total"]))
    leaked = sum(float(np.abs(per[~has, 0]).sum()) for _, per, has in steps)
    logged = max(rec["per_source"]["unlabeled"]["l3d"] for rec in epochs)
    defaults = TrainConfig()
    passed = (worst <= 1e-12 and leaked == 0.0 and logged == 0.0
              and (defaults.alpha, defaults.beta, defaults.gamma) == (0.5, 0.5, 1.0))
    record(6, "weighting conformance", passed,
           f"weights {w}, worst recomposition error {worst:.1e} (<= 1e-12) over {len(steps)} steps, "
           f"2d-only l3d sum {leaked} / logged {logged}")
    assert passed


def test_7_metric_oracles():
    rng = np.random.default_rng(7)
    worst_metric = worst_len = worst_dir = worst_pelvis = 0.0
    for _ in range(50):
        gt = rng.normal(scale=400.0, size=(6, 17, 3))
        pred = gt + rng.normal(scale=150.0, size=gt.shape)
        worst_metric = max(worst_metric, abs(mpje(pred, gt) - mpje_loop(pred, gt)) / mpje_loop(pred, gt),
                           abs(pck(pred, gt) - pck_loop(pred, gt, PCK_THRESHOLD)),
                           abs(auc(pred, gt) - auc_loop(pred, gt, AUC_GRID)))
        target = rng.uniform(50.0, 500.0, size=(6, 16))
        out = retarget(pred, target, TOPO)
        worst_len = max(worst_len, float(np.abs(bone_lengths(out, TOPO) - target).max()))
        before, after = bone_vectors(pred, TOPO), bone_vectors(out, TOPO)
        unit = lambda v: v / np.linalg.norm(v, axis=-1, keepdims=True)
        worst_dir = max(worst_dir, float(np.abs(unit(after) - unit(before)).max()))
        ratio = rng.uniform(0.0, 1.0)
        adjusted = pelvis_adjust(pred, TOPO, ratio)
        hand = pred.copy()
        for i in range(len(pred)):
            neck = pred[i, TOPO.neck_index]
            for j in (TOPO.root_index, *TOPO.hip_indices()):
                hand[i, j] = (1.0 - ratio) * pred[i, j] + ratio * neck
        worst_pelvis = max(worst_pelvis, float(np.abs(adjusted - hand).max()))
    passed = worst_metric <= 1e-10 and worst_len <= 1e-9 and worst_dir <= 1e-9 and worst_pelvis <= 1e-9
    record(7, "metric oracles", passed,
           f"metric vs loop {worst_metric:.1e} (<= 1e-10), retarget length {worst_len:.1e} / direction "
           f"{worst_dir:.1e} (<= 1e-9), pelvis adjust vs hand interpolation {worst_pelvis:.1e}")
    assert passed


def test_8_determinism_and_resume(tmp_path):
    labeled, unlabeled = tiny_data(32, 32, seed=8)
    config = tiny_config(phase1_epochs=3, phase2_epochs=3, joint_epochs=3)
    blobs = []
    reference_log = []
    for k in range(2):
        b = create_bundle(labeled, config, extra_2d=unlabeled)
        fit(b, labeled, unlabeled, log=reference_log.append if k == 0 else None)
        save_checkpoint(b, tmp_path / f"run{k}.wlk")
        blobs.append((tmp_path / f"run{k}.wlk").read_bytes())
    identical = blobs[0] == blobs[1]

    class Interrupt(Exception):
        pass

    strip = lambda recs: [{k: v for k, v in r.items() if k != "wall_time"} for r in recs]
    resumed_ok = []
    for stop in range(1, len(reference_log)):
        b = create_bundle(labeled, config, extra_2d=unlabeled)
        seen = []

        def log(rec):
            seen.append(rec)
            if len(seen) == stop:
                save_checkpoint(b, tmp_path / "ckpt.wlk")
                raise Interrupt

        with pytest.raises(Interrupt):
            fit(b, labeled, unlabeled, log=log)
        resumed = load_checkpoint(tmp_path / "ckpt.wlk")
        rest = []
        fit(resumed, labeled, unlabeled, log=rest.append)
        save_checkpoint(resumed, tmp_path / "resumed.wlk")
        resumed_ok.append((tmp_path / "resumed.wlk").read_bytes() == blobs[0]
                          and strip(seen + rest) == strip(reference_log))
    passed = identical and all(resumed_ok)
    record(8, "determinism and resume", passed,
           f"repeat run bit-identical: {identical}; resume after each of {len(resumed_ok)} epochs "
           f"matches step-for-step: {sum(resumed_ok)}/{len(resumed_ok)}")
    assert passed


def reprojection_error(batch_norm, seed):
    """Mean per-joint 2d error (px) of a re-projector fed held-out ground-truth 3d."""
    train = generate_synthetic(2000, 800 + seed)
    test = prepare(generate_synthetic(500, 900 + seed), TOPO)
    b = create_bundle(train, TrainConfig(hidden=256, phase2_epochs=10, batch_norm=batch_norm, seed=seed))
    train_phase_reprojector(b, train)
    out, _ = net.forward(b.reprojector, b.stats3d.apply(test.y3d), "eval")
    return float(np.linalg.norm(b.stats2d.invert(out) - test.y2d, axis=-1).mean())


def test_9_batch_norm_ablation():
    with_bn = float(np.mean([reprojection_error(True, seed) for seed in range(3)]))
    without = float(np.mean([reprojection_error(False, seed) for seed in range(3)]))
    passed = without > with_bn
    record(9, "re-projector batch-norm ablation", passed,
           f"mean re-projection error without BN {without:.2f} px vs with BN {with_bn:.2f} px "
           f"over 3 seeds, need without > with")
    assert passed
