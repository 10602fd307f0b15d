import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posedec.decoder import DecodedPose
from posedec.gradcheck import central_diff, rel_error
from posedec.scoring import (
    DivergenceError,
    ScoreNet,
    UndefinedOKSError,
    feature_dim,
    greedy_match,
    naive_score,
    oks,
    rank_poses,
    scorenet_forward,
    scorenet_loss_and_grads,
    scorenet_train,
    shape_features,
)
from posedec.targets import Pose, SkeletonConfig


def oks_direct(pred, gt_kps, vis, box_h, box_w, ks):
    num = den = 0.0
    for i in range(len(ks)):
        if vis[i] > 0:
            d2 = (pred[i][0] - gt_kps[i][0]) ** 2 + (pred[i][1] - gt_kps[i][1]) ** 2
            num += math.exp(-d2 / (2 * box_h * box_w * ks[i] ** 2))
            den += 1
    return num / den


def _decoded(kps, heat, center=1.0):
    kps = np.asarray(kps, dtype=float)
    return DecodedPose(kps, np.asarray(heat, dtype=float), center, np.zeros(len(kps), bool))


def test_oks_perfect(coco, rng):
    kps = rng.uniform(0, 50, size=(17, 2))
    gt = Pose(kps, np.full(17, 2), 40.0, 20.0)
    assert oks(kps, gt, coco) == 1.0


def test_oks_single_keypoint_e_inverse():
    cfg = SkeletonConfig(num_keypoints=1, sticks=[], oks_k=[0.079])
    gt = Pose([[3.0, 4.0]], [2], 9.0, 16.0)
    s = math.sqrt(9.0 * 16.0)
    d = s * 0.079 * math.sqrt(2)
    assert abs(oks([[3.0 + d, 4.0]], gt, cfg) - math.exp(-1)) < 1e-12


def test_oks_matches_direct_formula(coco, rng):
    for _ in range(300):
        gt_kps = rng.uniform(0, 100, size=(17, 2))
        vis = rng.integers(0, 3, size=17)
        vis[rng.integers(17)] = 2
        pred = gt_kps + rng.normal(0, 3, size=(17, 2))
        bh, bw = rng.uniform(5, 80, size=2)
        gt = Pose(gt_kps, vis, bh, bw)
        assert abs(oks(pred, gt, coco) - oks_direct(pred, gt_kps, vis, bh, bw, coco.oks_k)) < 1e-12


def test_oks_no_visible(coco):
    with pytest.raises(UndefinedOKSError):
        oks(np.zeros((17, 2)), Pose(np.zeros((17, 2)), np.zeros(17), 1.0, 1.0), coco)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 10))
def test_oks_translation_and_scale_invariance(tx, ty, scale):
    cfg = SkeletonConfig()
    rng = np.random.default_rng(3)
    gt_kps = rng.uniform(0, 60, size=(17, 2))
    pred = gt_kps + rng.normal(0, 2, size=(17, 2))
    base = oks(pred, Pose(gt_kps, np.full(17, 2), 30.0, 12.0), cfg)
    shifted = oks(pred + [tx, ty], Pose(gt_kps + [tx, ty], np.full(17, 2), 30.0, 12.0), cfg)
    scaled = oks(pred * scale, Pose(gt_kps * scale, np.full(17, 2), 30.0 * scale, 12.0 * scale), cfg)
    assert shifted == pytest.approx(base, abs=1e-9)
    assert scaled == pytest.approx(base, abs=1e-9)


def test_naive_score_values(rng):
    assert naive_score(_decoded(np.zeros((3, 2)), [1, 1, 1])) == 1.0
    assert naive_score(_decoded(np.zeros((3, 2)), [1, 1, 1], 0.5)) == 0.5
    heat = rng.uniform(size=17)
    c = rng.uniform()
    assert naive_score(_decoded(np.zeros((17, 2)), heat, c)) == pytest.approx(sum(heat) / 17 * c, rel=1e-12)


def test_feature_dimension(coco, rng):
    assert feature_dim(coco) == 74
    f = shape_features(_decoded(rng.uniform(0, 40, size=(17, 2)), rng.uniform(size=17)), coco)
    assert f.shape == (74,)


def test_features_coincident_points(coco):
    f = shape_features(_decoded(np.full((17, 2), 7.0), np.ones(17)), coco)
    assert not f[17:].any()


def test_features_toy_stick(toy_cfg):
    f = shape_features(_decoded([[0.0, 0.0], [3.0, 4.0]], [0.2, 0.7]), toy_cfg, norm_scale=1.0)
    np.testing.assert_allclose(f, [0.2, 0.7, 5.0, -3.0, -4.0])


def test_features_default_scale_invariant(coco, rng):
    kps = rng.uniform(0, 40, size=(17, 2))
    heat = rng.uniform(size=17)
    a = shape_features(_decoded(kps, heat), coco)
    b = shape_features(_decoded(kps * 3 + 5, heat), coco)
    np.testing.assert_allclose(a, b, atol=1e-12)


def _toy_net():
    return ScoreNet(
        [np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([[2.0, 1.0], [1.0, 1.0]]), np.array([[0.5, -0.5]])],
        [np.zeros(2), np.array([0.1, 0.0]), np.array([0.05])],
    )


def test_forward_hand_trace():
    # h1 = relu([0.3, -0.2]) = [0.3, 0]; h2 = relu([0.7, 0.3]); out = 0.35 - 0.15 + 0.05
    assert scorenet_forward(_toy_net(), [0.3, 0.2]) == pytest.approx(0.25, abs=1e-15)


def test_forward_zero_weights_returns_bias():
    net = ScoreNet.init([74, 64, 64, 1])
    for w in net.weights:
        w[:] = 0
    net.biases[-1][:] = 0.42
    assert scorenet_forward(net, np.ones(74)) == pytest.approx(0.42)
    net.biases[-1][:] = 1.7
    assert scorenet_forward(net, np.ones(74)) == 1.0
    assert scorenet_forward(net, np.ones(74), clamp=False) == pytest.approx(1.7)


def test_forward_matches_matrix_oracle(rng):
    net = ScoreNet.init([74, 64, 64, 1], seed=5)
    for b in net.biases:
        b += rng.normal(0, 0.1, b.shape)
    x = rng.normal(size=74)
    h = np.maximum(net.weights[0] @ x + net.biases[0], 0)
    h = np.maximum(net.weights[1] @ h + net.biases[1], 0)
    out = (net.weights[2] @ h + net.biases[2])[0]
    assert scorenet_forward(net, x, clamp=False) == pytest.approx(out, rel=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        scorenet_forward(ScoreNet.init([74, 8, 8, 1]), np.ones(73))


def test_backprop_finite_difference(rng):
    for _ in range(20):
        net = ScoreNet.init([6, 5, 4, 1], seed=int(rng.integers(1000)))
        net.weights[-1] = rng.normal(size=net.weights[-1].shape)
        for b in net.biases:
            b += rng.normal(0, 0.1, b.shape)  # keep pre-activations off the ReLU kink
        x = rng.normal(size=(7, 6))
        y = rng.uniform(size=7)
        _, gw, gb = scorenet_loss_and_grads(net, x, y)
        f = lambda: scorenet_loss_and_grads(net, x, y)[0]  # noqa: E731
        num = [central_diff(f, p) for p in net.weights + net.biases]
        assert rel_error(gw + gb, num) < 1e-4


def test_train_constant_target(rng):
    x = rng.uniform(size=(64, 10))
    net, _ = scorenet_train([(f, 0.37) for f in x], lr=0.3, epochs=4000, batch_size=64, seed=1, hidden=(16, 16))
    assert np.all(np.abs(scorenet_forward(net, x) - 0.37) < 1e-3)


def test_train_linear_teacher(rng):
    x = rng.uniform(size=(256, 8))
    w = rng.uniform(-1, 1, 8) / 8
    y = 0.5 + x @ w - 0.5 * w.sum()
    _, history = scorenet_train(list(zip(x, y)), lr=0.05, epochs=2000, batch_size=32, seed=0)
    assert history[-1] < 1e-4


def test_train_loss_non_increasing_small_rate(rng):
    x = rng.uniform(size=(128, 8))
    w = rng.uniform(-1, 1, 8) / 8
    y = 0.5 + x @ w - 0.5 * w.sum()
    _, history = scorenet_train(list(zip(x, y)), lr=1e-3, epochs=200, batch_size=128, seed=0)
    assert np.all(np.diff(history) <= 0)


def test_train_deterministic(rng):
    x = rng.uniform(size=(40, 5))
    ex = list(zip(x, rng.uniform(size=40)))
    a, _ = scorenet_train(ex, epochs=5, seed=3, hidden=(8, 8))
    b, _ = scorenet_train(ex, epochs=5, seed=3, hidden=(8, 8))
    assert a.to_dict() == b.to_dict()


def test_train_errors(rng):
    with pytest.raises(ValueError):
        scorenet_train([])
    with pytest.raises(ValueError):
        scorenet_train([(np.ones(3), 1.5)])
    x = np.full((8, 4), 1e200)
    with pytest.raises(DivergenceError, match="smaller"):
        scorenet_train([(f, 1.0) for f in x], lr=1.0, epochs=3, hidden=(8, 8))


def test_net_json_round_trip(tmp_path):
    net = ScoreNet.init([74, 64, 64, 1], seed=2)
    net.save(tmp_path / "net.json")
    back = ScoreNet.load(tmp_path / "net.json")
    assert back.sizes == [74, 64, 64, 1]
    x = np.linspace(0, 1, 74)
    assert scorenet_forward(back, x, clamp=False) == scorenet_forward(net, x, clamp=False)


def test_rank_naive_order():
    poses = [_decoded(np.zeros((2, 2)), [0.1, 0.1]), _decoded(np.zeros((2, 2)), [0.9, 0.9])]
    ranked = rank_poses(poses)
    assert [p.score for p in ranked] == pytest.approx([0.9, 0.1])


def test_rank_single_and_stable():
    (only,) = rank_poses([_decoded(np.zeros((2, 2)), [0.5, 0.5])])
    assert only.score == 0.5
    a, b = _decoded(np.zeros((2, 2)), [0.5, 0.5]), _decoded(np.ones((2, 2)), [0.5, 0.5])
    assert rank_poses([a, b]) == [a, b]


def test_rank_with_net_is_permutation(coco, rng):
    net = ScoreNet.init([74, 16, 16, 1], seed=0)
    poses = [_decoded(rng.uniform(0, 40, size=(17, 2)), rng.uniform(size=17)) for _ in range(6)]
    ranked = rank_poses(list(poses), net, coco)
    assert sorted(map(id, ranked)) == sorted(map(id, poses))
    assert all(0 <= p.score <= 1 for p in ranked)
    assert [p.score for p in ranked] == sorted((p.score for p in ranked), reverse=True)


def test_greedy_match():
    sim = np.array([[0.9, 0.8], [0.95, 0.1], [0.2, 0.3]])
    assert greedy_match(sim).tolist() == [1, 0, -1]
    assert greedy_match(np.zeros((0, 3))).tolist() == []
