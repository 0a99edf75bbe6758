"""Shared fixtures: tiny bundles and the full-objective gradient check."""
import numpy as np

from oracles import numeric_grad_ld, ref_joint_objective, rel_error, to_ld
from weaklift.data import Batch, drop_3d, generate_synthetic
from weaklift.pipeline import TrainConfig, create_bundle, joint_objective, prepare, symmetry_unit


def tiny_config(**kw):
    base = dict(hidden=8, batch_size=8, phase1_epochs=2, phase2_epochs=2, joint_epochs=2, lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def tiny_data(n_labeled=32, n_unlabeled=32, seed=0):
    labeled = generate_synthetic(n_labeled, seed)
    unlabeled = drop_3d(generate_synthetic(n_unlabeled, seed + 1000, source_tag="wild"))
    return labeled, unlabeled


def perturb_affine(params, rng, output_scale=1.0):
    """Move biases and batch-norm scale/shift off their init values.

    ``output_scale`` shrinks the last dense layer, keeping the summed squared
    errors (and so finite-difference roundoff) small.
    """
    last = f"layer{len(params.layers) - 1:02d}."
    params.weights[last + "W"] *= output_scale
    for name, w in params.weights.items():
        if name.endswith("gamma"):
            w[...] = rng.uniform(0.5, 1.5, size=w.shape)
        elif name.endswith(("beta", ".b")):
            w[...] = rng.normal(scale=0.3, size=w.shape)


def mixed_batch(bundle, B, rng):
    """A batch of B root-centered samples, some without 3d, with a few hidden joints."""
    arrays = prepare(generate_synthetic(B, int(rng.integers(1 << 30))), bundle.topology)
    has_3d = np.zeros(B, dtype=bool)
    has_3d[: rng.integers(0, B + 1)] = True
    rng.shuffle(has_3d)
    y3d = np.where(has_3d[:, None, None], arrays.y3d, 0.0)
    vis = rng.uniform(size=(B, bundle.topology.n_joints)) > 0.15
    return Batch(arrays.y2d, y3d, has_3d, vis, (~has_3d).astype(int), arrays.tags, arrays.ids)


def joint_gradient_error(H, B, seed, eps=1e-5):
    """Worst relative error of every parameter gradient of the weighted objective.

    Dropout masks are drawn once and replayed; batch-norm uses batch
    statistics without touching the running averages, so the objective is a
    deterministic function of the weights for the finite-difference probe.
    Returns ``(worst_error, total_mismatch)``.
    """
    rng = np.random.default_rng(seed)
    labeled, unlabeled = tiny_data(16, 16, seed)
    bundle = create_bundle(labeled, tiny_config(hidden=H, seed=seed), extra_2d=unlabeled)
    perturb_affine(bundle.lifter, rng, output_scale=0.2)
    perturb_affine(bundle.reprojector, rng, output_scale=0.2)
    batch = mixed_batch(bundle, B, rng)
    report, _, lg, rg, traces = joint_objective(bundle, batch, np.random.default_rng(seed),
                                                update_stats=False)
    masks = (traces[0].masks, traces[1].masks)
    lw, rw = to_ld(bundle.lifter.weights), to_ld(bundle.reprojector.weights)
    unit = symmetry_unit(bundle)

    def objective():
        return ref_joint_objective(bundle, lw, rw, batch, masks, unit)

    mismatch = abs(float(objective()) - report.total) / max(abs(report.total), 1e-12)
    worst = 0.0
    for weights, grads in ((lw, lg), (rw, rg)):
        for name, w in weights.items():
            numeric = numeric_grad_ld(objective, w, eps)
            worst = max(worst, float(rel_error(grads[name], numeric).max()))
    return worst, mismatch


# criterion number -> (passed, one-line summary); printed by conftest at session end
ACCEPTANCE = {}


def record(number, title, passed, detail):
    ACCEPTANCE[number] = (bool(passed), f"{title}: {detail}")
    print(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
