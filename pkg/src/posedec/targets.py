"""Groundtruth target construction: keypoint heatmaps, loss masks, center
heatmap and per-pixel offset maps."""
import json
from dataclasses import dataclass, field, fields
from importlib import resources

import numpy as np


class DegeneratePoseError(ValueError):
    """A pose has no labeled keypoint, so its center is undefined."""


def _load_coco_defaults():
    with resources.files("posedec.data").joinpath("coco_skeleton.json").open() as f:
        return json.load(f)


_COCO = _load_coco_defaults()


@dataclass
class SkeletonConfig:
    num_keypoints: int = len(_COCO["oks_k"])
    sticks: list = field(default_factory=lambda: [tuple(s) for s in _COCO["sticks"]])
    oks_k: list = field(default_factory=lambda: list(_COCO["oks_k"]))
    sigma: float = _COCO["sigma"]
    truncate: float = 3.0
    center_radius: int = _COCO["center_radius"]
    center_metric: str = _COCO["center_metric"]
    mask_bg_weight: float = _COCO["mask_bg_weight"]

    def __post_init__(self):
        self.sticks = [tuple(int(i) for i in s) for s in self.sticks]
        self.oks_k = [float(k) for k in self.oks_k]
        if len(self.oks_k) != self.num_keypoints:
            raise ValueError("oks_k must have one entry per keypoint")
        for i, j in self.sticks:
            if not (0 <= i < self.num_keypoints and 0 <= j < self.num_keypoints):
                raise ValueError(f"stick ({i}, {j}) out of range")
        if min(self.oks_k) <= 0 or self.sigma <= 0 or self.truncate <= 0:
            raise ValueError("oks_k, sigma and truncate must be positive")
        if self.center_radius < 0:
            raise ValueError("center_radius must be >= 0")
        if self.center_metric not in ("chebyshev", "euclidean"):
            raise ValueError(f"unknown center_metric {self.center_metric!r}")

    @property
    def radius(self):
        """Truncation radius of a Gaussian deposit, in map pixels."""
        return self.truncate * self.sigma

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown skeleton keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Pose:
    """K keypoints in map pixels with COCO visibility flags (0, 1, 2).

    ``box_h``/``box_w`` default to the tight box of the labeled keypoints.
    """

    keypoints: np.ndarray
    visibility: np.ndarray
    box_h: float = None
    box_w: float = None

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        self.visibility = np.asarray(self.visibility, dtype=np.int64).reshape(-1)
        if len(self.visibility) != len(self.keypoints):
            raise ValueError("keypoints and visibility lengths differ")
        labeled = self.keypoints[self.labeled]
        if self.box_h is None:
            self.box_h = float(np.ptp(labeled[:, 1])) if len(labeled) else 0.0
        if self.box_w is None:
            self.box_w = float(np.ptp(labeled[:, 0])) if len(labeled) else 0.0

    @property
    def labeled(self):
        return self.visibility > 0

    @property
    def size(self):
        return float(np.hypot(self.box_h, self.box_w))

    @classmethod
    def from_coco(cls, obj):
        trip = np.asarray(obj["keypoints"], dtype=np.float64).reshape(-1, 3)
        box = obj.get("box")
        h, w = (None, None) if box is None else (float(box[0]), float(box[1]))
        return cls(trip[:, :2], trip[:, 2].astype(np.int64), h, w)

    def to_coco(self):
        trip = np.column_stack([self.keypoints, self.visibility])
        flat = [float(v) for v in trip.ravel()]
        for i in range(2, len(flat), 3):
            flat[i] = int(flat[i])
        return {"keypoints": flat, "box": [self.box_h, self.box_w]}


def load_poses(path):
    with open(path) as f:
        return [Pose.from_coco(o) for o in json.load(f)]


def dump_poses(poses, path):
    with open(path, "w") as f:
        json.dump([p.to_coco() for p in poses], f)


@dataclass
class TargetSet:
    kp_heatmaps: np.ndarray
    center_heatmap: np.ndarray
    offset_maps: np.ndarray
    loss_mask: np.ndarray
    offset_valid: np.ndarray
    instance_size: np.ndarray


def pose_center(pose):
    """Mean position of the labeled keypoints."""
    if not pose.labeled.any():
        raise DegeneratePoseError("pose has no labeled keypoints")
    return pose.keypoints[pose.labeled].mean(axis=0)


def rounded_center(pose):
    return np.floor(pose_center(pose) + 0.5).astype(np.int64)


def _window(cx, cy, r, h, w):
    x0 = max(int(np.floor(cx - r)), 0)
    x1 = min(int(np.ceil(cx + r)), w - 1)
    y0 = max(int(np.floor(cy - r)), 0)
    y1 = min(int(np.ceil(cy + r)), h - 1)
    return x0, x1, y0, y1


def build_keypoint_heatmaps(poses, cfg, h, w):
    kp_heatmaps = np.zeros((cfg.num_keypoints, h, w))
    region = np.zeros((cfg.num_keypoints, h, w), dtype=bool)
    r = cfg.radius
    two_var = 2.0 * cfg.sigma**2
    for pose in poses:
        for k in np.flatnonzero(pose.labeled):
            cx, cy = pose.keypoints[k]
            x0, x1, y0, y1 = _window(cx, cy, r, h, w)
            if x0 > x1 or y0 > y1:
                continue
            xs = np.arange(x0, x1 + 1)
            ys = np.arange(y0, y1 + 1)[:, None]
            d2 = (xs - cx) ** 2 + (ys - cy) ** 2
            inside = d2 <= r * r
            g = np.where(inside, np.exp(-d2 / two_var), 0.0)
            patch = kp_heatmaps[k, y0 : y1 + 1, x0 : x1 + 1]
            np.maximum(patch, g, out=patch)
            region[k, y0 : y1 + 1, x0 : x1 + 1] |= inside
    loss_mask = np.where(region, 1.0, cfg.mask_bg_weight)
    return kp_heatmaps, loss_mask


def center_region(center, cfg, h, w):
    """Integer pixels (xs, ys) of the center region around a rounded center."""
    rad = cfg.center_radius
    cx, cy = int(center[0]), int(center[1])
    dx, dy = np.meshgrid(np.arange(-rad, rad + 1), np.arange(-rad, rad + 1))
    if cfg.center_metric == "euclidean":
        keep = dx**2 + dy**2 <= rad * rad
        dx, dy = dx[keep], dy[keep]
    xs = (cx + dx).ravel()
    ys = (cy + dy).ravel()
    inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    return xs[inside], ys[inside]


def build_center_targets(poses, cfg, h, w):
    """Return (center_heatmap, offset_maps, offset_valid, instance_size).

    A pixel inside several center regions belongs to the pose with the
    nearest (unrounded) center; equal distances go to the lower pose index.
    """
    k = cfg.num_keypoints
    best = np.full((h, w), np.inf)
    owner = np.full((h, w), -1, dtype=np.int64)
    conf = np.zeros((h, w))
    centers = [pose_center(p) for p in poses]

    for n, pose in enumerate(poses):
        rc = np.floor(centers[n] + 0.5).astype(np.int64)
        xs, ys = center_region(rc, cfg, h, w)
        d = np.hypot(xs - centers[n][0], ys - centers[n][1])
        win = d < best[ys, xs]
        xs, ys = xs[win], ys[win]
        best[ys, xs] = d[win]
        owner[ys, xs] = n
        conf[ys, xs] = np.exp(-((xs - rc[0]) ** 2 + (ys - rc[1]) ** 2) / (2.0 * cfg.sigma**2))

    offsets = np.zeros((2 * k, h, w))
    size = np.zeros((h, w))
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    for n, pose in enumerate(poses):
        sel = owner == n
        if not sel.any():
            continue
        offsets[0::2, sel] = pose.keypoints[:, 0:1] - gx[sel]
        offsets[1::2, sel] = pose.keypoints[:, 1:2] - gy[sel]
        size[sel] = pose.size

    valid = (owner >= 0).astype(np.float64)
    return conf[None], offsets, valid[None], size[None]


def build_targets(poses, cfg, h, w):
    kp_heatmaps, loss_mask = build_keypoint_heatmaps(poses, cfg, h, w)
    center, offsets, valid, size = build_center_targets(poses, cfg, h, w)
    return TargetSet(kp_heatmaps, center, offsets, loss_mask, valid, size)
