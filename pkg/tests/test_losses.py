import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from oracles import loss3d_loop, numeric_grad, rel_error
from weaklift.data import generate_synthetic
from weaklift.exceptions import FrameError
from weaklift.losses import (LossWeights, loss_3d, loss_reproj, loss_symmetry, squared_error_per_sample,
                             total_loss)
from weaklift.skeleton import NORMALIZED, ROOT_CENTERED, Pose3D, default_topology

TOPO = default_topology()


def symmetric_pose(seed=0):
    return generate_synthetic(1, seed)[0].y3d.coords.copy()


def test_loss_3d_matches_loop():
    rng = np.random.default_rng(0)
    pred, gt = rng.normal(size=(2, 6, 17, 3))
    loss, _ = loss_3d(pred, gt)
    assert loss == pytest.approx(loss3d_loop(pred, gt), rel=1e-12)


def test_loss_3d_shape_agnostic():
    rng = np.random.default_rng(1)
    pred, gt = rng.normal(size=(2, 5, 17, 3))
    assert loss_3d(pred, gt)[0] == pytest.approx(loss_3d(pred.reshape(5, -1), gt.reshape(5, -1))[0],
                                                 rel=1e-14)


def test_loss_3d_single_offset_joint():
    gt = np.zeros((1, 17, 3))
    pred = gt.copy()
    pred[0, 4] = [3.0, 4.0, 0.0]
    assert loss_3d(pred, gt)[0] == pytest.approx(25.0)


def test_loss_3d_sample_weight_gates_samples():
    rng = np.random.default_rng(2)
    pred, gt = rng.normal(size=(2, 4, 51))
    w = np.array([1.0, 0.0, 1.0, 0.0])
    loss, grad = loss_3d(pred, gt, sample_weight=w)
    # normalizer stays the full batch size
    assert loss == pytest.approx(loss3d_loop(pred[[0, 2]], gt[[0, 2]]) / 2, rel=1e-12)
    assert not grad[[1, 3]].any()


def test_loss_3d_errors():
    with pytest.raises(ValueError):
        loss_3d(np.zeros((2, 51)), np.zeros((2, 48)))
    with pytest.raises(FrameError):
        loss_3d(Pose3D(np.zeros((1, 17, 3)), NORMALIZED),
                Pose3D(np.zeros((1, 17, 3)), ROOT_CENTERED))


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    pred, gt = rng.normal(size=(2, 3, 17, 3))
    w = rng.uniform(size=3)
    _, g = loss_3d(pred, gt, w)
    num = numeric_grad(lambda: loss_3d(pred, gt, w)[0], pred)
    assert rel_error(g, num).max() < 1e-6

    r2, t2 = rng.normal(size=(2, 3, 17, 2))
    vis = rng.integers(0, 2, size=(3, 17))
    _, g = loss_reproj(r2, t2, vis)
    num = numeric_grad(lambda: loss_reproj(r2, t2, vis)[0], r2)
    assert rel_error(g, num).max() < 1e-6

    p = symmetric_pose() + rng.normal(scale=20.0, size=(17, 3))
    p = (p / 100.0)[None].repeat(2, axis=0)
    p[1] += rng.normal(scale=0.3, size=(17, 3))
    _, g = loss_symmetry(p, TOPO)
    num = numeric_grad(lambda: loss_symmetry(p, TOPO)[0], p)
    assert rel_error(g, num).max() < 1e-5


def test_reproj_mask_annihilates_hidden_joints():
    rng = np.random.default_rng(4)
    r2, t2 = rng.normal(size=(2, 2, 17, 2))
    vis = np.ones((2, 17))
    vis[:, 5] = 0
    base, grad = loss_reproj(r2, t2, vis)
    r2[:, 5] += 1000.0
    assert loss_reproj(r2, t2, vis)[0] == base
    assert not grad[:, 5].any()
    assert loss_reproj(r2, t2, np.zeros((2, 17)))[0] == 0.0


def test_reproj_visibility_shape_checked():
    with pytest.raises(ValueError):
        loss_reproj(np.zeros((2, 17, 2)), np.zeros((2, 17, 2)), np.ones((2, 16)))


def test_symmetry_hand_example():
    p = symmetric_pose()
    wrist, elbow = TOPO.joint_index("l_wrist"), TOPO.joint_index("l_elbow")
    d = p[wrist] - p[elbow]
    p[wrist] += 10.0 * d / np.linalg.norm(d)
    # one forearm 10 mm longer: (10^2) summed in the arm class, averaged over 4 classes
    assert loss_symmetry(p, TOPO)[0] == pytest.approx(25.0, rel=1e-9)


def test_symmetry_zero_on_degenerate_pose_with_zero_gradient():
    loss, grad = loss_symmetry(np.zeros((2, 17, 3)), TOPO)
    assert loss == 0.0
    assert not grad.any()


def test_symmetry_rejects_normalized():
    with pytest.raises(FrameError):
        loss_symmetry(Pose3D(np.zeros((17, 3)), NORMALIZED), TOPO)


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_loss_identities_randomized(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    a3, b3 = rng.normal(scale=300.0, size=(2, n, 17, 3))
    a2, b2 = rng.normal(scale=200.0, size=(2, n, 17, 2))
    vis = rng.integers(0, 2, size=(n, 17))

    # zero at equality, nonnegative otherwise
    assert loss_3d(a3, a3)[0] == 0.0
    assert loss_reproj(a2, a2, vis)[0] == 0.0
    assert loss_3d(a3, b3)[0] >= 0.0
    assert loss_reproj(a2, b2, vis)[0] >= 0.0
    sym, _ = loss_symmetry(a3, TOPO)
    assert sym >= 0.0

    # symmetry loss is invariant to a rigid motion
    rot = Rotation.random(random_state=seed % (2**31)).as_matrix()
    moved = a3 @ rot.T + rng.normal(scale=1000.0, size=3)
    assert loss_symmetry(moved, TOPO)[0] == pytest.approx(sym, rel=1e-8, abs=1e-8)

    # hidden joints do not affect the re-projection loss
    noisy = a2 + np.where(vis[..., None] == 0, rng.normal(scale=1e3, size=a2.shape), 0.0)
    assert loss_reproj(noisy, b2, vis)[0] == loss_reproj(a2, b2, vis)[0]


def test_symmetry_is_zero_on_mirrored_skeleton():
    p = symmetric_pose(5)
    assert loss_symmetry(p, TOPO)[0] < 1e-12


def test_total_loss_recomposes_and_gates_alpha():
    w = LossWeights()
    r = total_loss(2.0, 3.0, 5.0, w)
    assert r.total == 0.5 * 2.0 + 0.5 * 3.0 + 1.0 * 5.0
    r = total_loss(2.0, 3.0, 5.0, w, has_3d_gt=False)
    assert r.alpha == 0.0 and r.total == 0.5 * 3.0 + 5.0
    with pytest.raises(ValueError):
        total_loss(np.nan, 0.0, 0.0, w)


def test_loss_weights_range():
    with pytest.raises(ValueError):
        LossWeights(alpha=1.5)
    with pytest.raises(ValueError):
        LossWeights(gamma=-0.1)


def test_squared_error_per_sample():
    pred = np.ones((3, 4))
    np.testing.assert_array_equal(squared_error_per_sample(pred, np.zeros((3, 4))), [4.0, 4.0, 4.0])
