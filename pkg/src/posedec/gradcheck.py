"""Central finite-difference checks of every analytic gradient in the library."""
import numpy as np

from posedec.art import ConvKernel, adaptive_conv, adaptive_conv_input_adjoint
from posedec.losses import LossConfig, heatmap_loss, regression_loss, total_loss
from posedec.scoring import ScoreNet, scorenet_loss_and_grads
from posedec.targets import Pose, SkeletonConfig, build_targets

STEP = 1e-6
TOLERANCE = 1e-4


def central_diff(f, x, step=STEP):
    """Numerical gradient of scalar ``f`` at array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_error(analytic, numeric):
    """Largest entrywise gap, relative to the larger of the two gradients' sup-norms."""
    a = np.concatenate([np.ravel(v) for v in analytic])
    n = np.concatenate([np.ravel(v) for v in numeric])
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def random_loss_instance(rng, h=10, w=11, k=2):
    """Targets from 1-3 random poses plus perturbed predictions."""
    cfg = SkeletonConfig(
        num_keypoints=k, sticks=[(0, 1)], oks_k=[0.1] * k, sigma=1.5, center_radius=1
    )
    poses = []
    for _ in range(rng.integers(1, 4)):
        kps = rng.uniform([0, 0], [w - 1, h - 1], size=(k, 2))
        poses.append(Pose(kps, np.full(k, 2), rng.uniform(2, 8), rng.uniform(2, 8)))
    t = build_targets(poses, cfg, h, w)
    loss_cfg = LossConfig(smooth_l1_beta=rng.uniform(0.5, 2.0))
    pred_h = t.kp_heatmaps + rng.normal(0, 0.3, t.kp_heatmaps.shape)
    pred_c = t.center_heatmap + rng.normal(0, 0.3, t.center_heatmap.shape)
    pred_o = t.offset_maps + rng.normal(0, 2.0, t.offset_maps.shape)
    return t, loss_cfg, pred_h, pred_c, pred_o


def check_heatmap_loss(rng):
    t, _, pred_h, _, _ = random_loss_instance(rng)
    _, grad = heatmap_loss(pred_h, t)
    num = central_diff(lambda: heatmap_loss(pred_h, t)[0], pred_h)
    return rel_error([grad], [num])


def check_regression_loss(rng):
    t, cfg, _, pred_c, pred_o = random_loss_instance(rng)
    _, g_c, g_o = regression_loss(pred_c, pred_o, t, cfg)
    f = lambda: regression_loss(pred_c, pred_o, t, cfg)[0]  # noqa: E731
    return rel_error([g_c, g_o], [central_diff(f, pred_c), central_diff(f, pred_o)])


def check_total_loss(rng):
    t, cfg, pred_h, pred_c, pred_o = random_loss_instance(rng)
    _, grads = total_loss(pred_h, pred_c, pred_o, t, cfg)
    f = lambda: total_loss(pred_h, pred_c, pred_o, t, cfg)[0]  # noqa: E731
    numeric = [central_diff(f, pred_h), central_diff(f, pred_c), central_diff(f, pred_o)]
    return rel_error([grads["heatmaps"], grads["center"], grads["offsets"]], numeric)


def check_scorenet(rng):
    sizes = [int(rng.integers(3, 9)), int(rng.integers(2, 7)), int(rng.integers(2, 7)), 1]
    net = ScoreNet.init(sizes, seed=int(rng.integers(2**31)))
    for b in net.biases:
        b += rng.normal(0, 0.1, b.shape)
    x = rng.normal(size=(int(rng.integers(1, 10)), sizes[0]))
    y = rng.uniform(size=len(x))
    _, gw, gb = scorenet_loss_and_grads(net, x, y)
    f = lambda: scorenet_loss_and_grads(net, x, y)[0]  # noqa: E731
    params = net.weights + net.biases
    numeric = [central_diff(f, p) for p in params]
    return rel_error(gw + gb, numeric)


def check_art_adjoint(rng):
    """Finite-difference Jacobian of the adaptive conv against its adjoint."""
    c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    x = rng.normal(size=(c_in, h, w))
    kernel = ConvKernel(rng.normal(size=(c_out, c_in, 9)), rng.normal(size=c_out))
    field = rng.normal(0, 1.0, size=(4, h, w))
    g = rng.normal(size=(c_out, h, w))
    f = lambda: float(np.sum(g * adaptive_conv(x, kernel, field)))  # noqa: E731
    num = central_diff(f, x)
    return rel_error([adaptive_conv_input_adjoint(g, kernel, field)], [num])


SUITES = {
    "losses": (check_heatmap_loss, check_regression_loss, check_total_loss),
    "scorenet": (check_scorenet,),
    "art_adjoint": (check_art_adjoint,),
}


def run_suites(instances=100, seed=0, tolerance=TOLERANCE):
    """Run every suite; returns ``{suite: {check: max relative error}}``."""
    report = {}
    for s_idx, (suite, checks) in enumerate(SUITES.items()):
        report[suite] = {}
        for c_idx, check in enumerate(checks):
            rng = np.random.default_rng(np.random.SeedSequence([seed, s_idx, c_idx]))
            worst = max(check(rng) for _ in range(instances))
            report[suite][check.__name__] = worst
    passed = {s: all(v < tolerance for v in r.values()) for s, r in report.items()}
    return report, passed
