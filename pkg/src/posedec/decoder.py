"""Inference-time grouping: heatmap peaks become keypoint candidates, center
peaks plus their offsets become grouping cues, and each cue absorbs the
nearest same-type candidate."""
from dataclasses import dataclass, field, fields

import numpy as np

from posedec.tensor import bilinear_sample


@dataclass
class DecodeConfig:
    max_candidates: int = 30
    heat_threshold: float = 0.01
    max_cues: int = 30
    absorb_radius_px: float = 75.0  # input-image pixels
    output_stride: int = 4
    nms_window: int = 3
    refine: bool = True

    def __post_init__(self):
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValueError("nms_window must be odd and >= 3")
        for name in ("max_candidates", "max_cues", "absorb_radius_px", "output_stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.heat_threshold < 0:
            raise ValueError("heat_threshold must be >= 0")

    @property
    def absorb_radius(self):
        """Absorption radius in map pixels."""
        return self.absorb_radius_px / self.output_stride

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown decode keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class KeypointCandidate:
    kp_type: int
    x: float
    y: float
    heatvalue: float


@dataclass
class GroupingCue:
    center: tuple
    center_heatvalue: float
    keypoints: np.ndarray  # K x 2


@dataclass
class DecodedPose:
    keypoints: np.ndarray  # K x 2
    kp_heatvalues: np.ndarray
    center_heatvalue: float
    absorbed: np.ndarray
    center: tuple = (0.0, 0.0)
    score: float = 0.0
    extras: dict = field(default_factory=dict)


def nms_peaks(fmap, window=3, top_n=30, threshold=0.01):
    """Local maxima of a 2-D map as ``[((x, y), value), ...]``, strongest first.

    A pixel is kept when no pixel in its window is larger and no pixel
    preceding it in raster order within the window is equal to it.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim == 3:
        fmap = fmap[0]
    h, w = fmap.shape
    r = window // 2
    padded = np.pad(fmap, r, constant_values=-np.inf)
    keep = fmap >= threshold
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx == 0 and dy == 0:
                continue
            nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            if dy < 0 or (dy == 0 and dx < 0):
                keep &= fmap > nb
            else:
                keep &= fmap >= nb
    ys, xs = np.nonzero(keep)  # raster order
    vals = fmap[ys, xs]
    order = np.argsort(-vals, kind="stable")[:top_n]
    return [((int(xs[i]), int(ys[i])), float(vals[i])) for i in order]


def _refine(fmap, x, y):
    h, w = fmap.shape
    fx, fy = float(x), float(y)
    if 0 < x < w - 1:
        fx += 0.25 * np.sign(fmap[y, x + 1] - fmap[y, x - 1])
    if 0 < y < h - 1:
        fy += 0.25 * np.sign(fmap[y + 1, x] - fmap[y - 1, x])
    return fx, fy


def extract_candidates(heatmaps, cfg=None):
    """Per keypoint type, the NMS peaks of its heatmap as candidates."""
    cfg = cfg or DecodeConfig()
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    out = []
    for k, hm in enumerate(heatmaps):
        cands = []
        for (x, y), v in nms_peaks(hm, cfg.nms_window, cfg.max_candidates, cfg.heat_threshold):
            fx, fy = _refine(hm, x, y) if cfg.refine else (float(x), float(y))
            cands.append(KeypointCandidate(k, fx, fy, v))
        out.append(cands)
    return out


def extract_cues(center, offsets, cfg=None):
    """Regressed poses read off the offset maps at center-heatmap peaks."""
    cfg = cfg or DecodeConfig()
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape[0] % 2 or offsets.shape[1:] != np.shape(center)[-2:]:
        raise ValueError("offset maps must be 2K x H x W matching the center map")
    cues = []
    for (x, y), v in nms_peaks(center, cfg.nms_window, cfg.max_cues, cfg.heat_threshold):
        kps = np.column_stack([x + offsets[0::2, y, x], y + offsets[1::2, y, x]])
        cues.append(GroupingCue((float(x), float(y)), v, kps))
    return cues


def group(cues, candidates, cfg=None, heatmaps=None):
    """Replace each regressed keypoint by its nearest same-type candidate when
    that candidate lies within the absorption radius.

    Candidates stay available to every cue. A keypoint that absorbs nothing
    keeps its regressed position and, if ``heatmaps`` is given, the heat value
    sampled there (0 otherwise).
    """
    cfg = cfg or DecodeConfig()
    radius = cfg.absorb_radius
    cand_xy = []
    cand_v = []
    for cands in candidates:
        cand_xy.append(np.array([[c.x, c.y] for c in cands]).reshape(-1, 2))
        cand_v.append(np.array([c.heatvalue for c in cands]))

    poses = []
    for cue in cues:
        k_count = len(cue.keypoints)
        kps = cue.keypoints.astype(np.float64).copy()
        heat = np.zeros(k_count)
        absorbed = np.zeros(k_count, dtype=bool)
        for k in range(k_count):
            if len(cand_xy[k]):
                d = np.hypot(*(cand_xy[k] - kps[k]).T)
                j = int(np.argmin(d))
                if d[j] <= radius:
                    kps[k] = cand_xy[k][j]
                    heat[k] = cand_v[k][j]
                    absorbed[k] = True
                    continue
            if heatmaps is not None:
                heat[k] = float(bilinear_sample(heatmaps[k : k + 1], kps[k, 0], kps[k, 1])[0])
        poses.append(DecodedPose(kps, heat, cue.center_heatvalue, absorbed, cue.center))
    return poses


def decode(heatmaps, center, offsets, cfg=None):
    cfg = cfg or DecodeConfig()
    candidates = extract_candidates(heatmaps, cfg)
    cues = extract_cues(center, offsets, cfg)
    return group(cues, candidates, cfg, heatmaps)


def to_coco_results(poses, image_id, output_stride=4):
    """COCO keypoint-result records; the third keypoint slot carries the
    keypoint heat value."""
    results = []
    for p in poses:
        trip = np.column_stack([p.keypoints * output_stride, p.kp_heatvalues])
        results.append(
            {
                "image_id": int(image_id),
                "category_id": 1,
                "keypoints": [round(float(v), 6) for v in trip.ravel()],
                "score": round(float(p.score), 6),
                "center_heatvalue": round(float(p.center_heatvalue), 6),
            }
        )
    return results


def from_coco_result(obj, output_stride=4):
    trip = np.asarray(obj["keypoints"], dtype=np.float64).reshape(-1, 3)
    k = len(trip)
    return DecodedPose(
        trip[:, :2] / output_stride,
        trip[:, 2].copy(),
        float(obj.get("center_heatvalue", 1.0)),
        np.zeros(k, dtype=bool),
        score=float(obj.get("score", 0.0)),
    )
