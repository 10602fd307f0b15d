"""Pose scoring: OKS, the naive heat-value score, the shape + heat-value
feature and a small ReLU network trained to regress OKS."""
import json
from dataclasses import dataclass

import numpy as np


class UndefinedOKSError(ValueError):
    """The groundtruth pose has no labeled keypoint."""


class DivergenceError(RuntimeError):
    pass


def oks(pred, gt, cfg):
    """Object keypoint similarity of predicted keypoints (K x 2) against a
    groundtruth :class:`~posedec.targets.Pose`, with ``s**2 = box_h * box_w``."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    vis = gt.visibility > 0
    if not vis.any():
        raise UndefinedOKSError("groundtruth pose has no labeled keypoints")
    s2 = gt.box_h * gt.box_w
    k2 = np.asarray(cfg.oks_k) ** 2
    d2 = np.sum((pred - gt.keypoints) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        e = np.exp(-d2 / (2.0 * s2 * k2))
    return float(np.sum(e[vis]) / np.sum(vis))


def oks_matrix(preds, gts, cfg):
    return np.array([[oks(p, g, cfg) for g in gts] for p in preds]).reshape(len(preds), len(gts))


def greedy_match(sim):
    """One-to-one matching taking the highest remaining similarity first.

    Returns ``match[i] = j`` (or -1) for every row. Ties resolve to the
    lowest (row, column) in raster order.
    """
    sim = np.asarray(sim, dtype=np.float64)
    n_rows, n_cols = sim.shape
    match = np.full(n_rows, -1, dtype=np.int64)
    if sim.size == 0:
        return match
    order = np.argsort(-sim, axis=None, kind="stable")
    row_used = np.zeros(n_rows, dtype=bool)
    col_used = np.zeros(n_cols, dtype=bool)
    for flat in order:
        i, j = divmod(int(flat), n_cols)
        if row_used[i] or col_used[j]:
            continue
        match[i] = j
        row_used[i] = col_used[j] = True
    return match


def naive_score(pose):
    return float(np.mean(pose.kp_heatvalues) * pose.center_heatvalue)


def feature_dim(cfg):
    return cfg.num_keypoints + 3 * len(cfg.sticks)


def pose_norm_scale(keypoints):
    """Diagonal of the tight keypoint box; 1 for a degenerate box."""
    kp = np.asarray(keypoints, dtype=np.float64)
    diag = float(np.hypot(np.ptp(kp[:, 0]), np.ptp(kp[:, 1])))
    return diag if diag > 0 else 1.0


def shape_features(pose, cfg, norm_scale=None):
    """``[heat values (K) | stick lengths (E) | stick offsets dx, dy (2E)]``.

    Stick ``(i, j)`` contributes ``|p_i - p_j|`` and ``p_i - p_j``, both
    divided by ``norm_scale``.
    """
    kp = np.asarray(pose.keypoints, dtype=np.float64)
    if norm_scale is None:
        norm_scale = pose_norm_scale(kp)
    sticks = np.asarray(cfg.sticks, dtype=np.int64).reshape(-1, 2)
    diff = (kp[sticks[:, 0]] - kp[sticks[:, 1]]) / norm_scale
    lengths = np.hypot(diff[:, 0], diff[:, 1])
    return np.concatenate([np.asarray(pose.kp_heatvalues, dtype=np.float64), lengths, diff.ravel()])


@dataclass
class ScoreNet:
    weights: list  # weights[l] has shape (sizes[l + 1], sizes[l])
    biases: list

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @classmethod
    def init(cls, sizes, seed=0):
        """He-initialised hidden layers; the output layer and all biases start at 0."""
        rng = np.random.default_rng(seed)
        weights = [
            rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
            for n_in, n_out in zip(sizes[:-2], sizes[1:-1])
        ]
        weights.append(np.zeros((sizes[-1], sizes[-2])))
        biases = [np.zeros(n_out) for n_out in sizes[1:]]
        return cls(weights, biases)

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "layers": [
                {"w": [float(v) for v in w.ravel()], "b": [float(v) for v in b]}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        sizes = d["sizes"]
        if len(d["layers"]) != len(sizes) - 1:
            raise ValueError("layer count does not match sizes")
        weights, biases = [], []
        for n_in, n_out, layer in zip(sizes[:-1], sizes[1:], d["layers"]):
            weights.append(np.asarray(layer["w"], dtype=np.float64).reshape(n_out, n_in))
            biases.append(np.asarray(layer["b"], dtype=np.float64).reshape(n_out))
        return cls(weights, biases)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _forward(net, x):
    """Batch forward pass; returns the raw outputs and per-layer activations."""
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h[:, 0], acts


def scorenet_forward(net, feat, clamp=True):
    feat = np.asarray(feat, dtype=np.float64)
    single = feat.ndim == 1
    x = feat.reshape(1, -1) if single else feat
    if x.shape[1] != net.sizes[0]:
        raise ValueError(f"feature width {x.shape[1]} != network input {net.sizes[0]}")
    out, _ = _forward(net, x)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if single else out


def scorenet_loss_and_grads(net, x, y):
    """Mean squared error over the batch and its gradients per parameter."""
    out, acts = _forward(net, x)
    n = len(y)
    resid = out - y
    loss = float(np.mean(resid * resid))
    delta = (2.0 / n) * resid[:, None]
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i]) * (acts[i] > 0)
    return loss, gw, gb


def scorenet_train(examples, lr=0.01, epochs=200, batch_size=32, seed=0, hidden=(64, 64), net=None):
    """Fit a ScoreNet to ``(feature, target OKS)`` pairs by mini-batch
    gradient descent on the squared error.

    Returns ``(net, history)`` where ``history[e]`` is the full-set MSE after
    epoch ``e``.
    """
    if len(examples) == 0:
        raise ValueError("no training examples")
    x = np.asarray([e[0] for e in examples], dtype=np.float64)
    y = np.asarray([e[1] for e in examples], dtype=np.float64)
    if np.any((y < 0) | (y > 1)):
        raise ValueError("targets must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    if net is None:
        net = ScoreNet.init([x.shape[1], *hidden, 1], seed=rng.integers(2**63))
    else:
        net = ScoreNet([w.copy() for w in net.weights], [b.copy() for b in net.biases])

    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            _train_epoch(net, x, y, lr, batch_size, rng)
            out, _ = _forward(net, x)
            loss = float(np.mean((out - y) ** 2))
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss became {loss}; try a smaller learning rate")
            history.append(loss)
    return net, history


def _train_epoch(net, x, y, lr, batch_size, rng):
    perm = rng.permutation(len(y))
    for start in range(0, len(y), batch_size):
        idx = perm[start : start + batch_size]
        _, gw, gb = scorenet_loss_and_grads(net, x[idx], y[idx])
        for i in range(len(net.weights)):
            net.weights[i] -= lr * gw[i]
            net.biases[i] -= lr * gb[i]


def rank_poses(poses, net=None, cfg=None):
    """Fill each pose's score and return the poses sorted by score, highest
    first (stable on ties)."""
    if net is not None and cfg is None:
        from posedec.targets import SkeletonConfig

        cfg = SkeletonConfig()
    for p in poses:
        if net is None:
            p.score = naive_score(p)
        else:
            p.score = scorenet_forward(net, shape_features(p, cfg))
    return sorted(poses, key=lambda p: -p.score)
