"""Synthetic multi-person scenes: template skeletons under random similarity
transforms, their ideal target maps, and optionally noisy copies of those
maps standing in for network predictions.

Randomness comes from numpy's PCG64 generator. Scene ``i`` of a run with
seed ``s`` is drawn from ``SeedSequence([s, i])`` so scenes can be produced
in any order or in parallel.
"""
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from importlib import resources

import numpy as np

from posedec.decoder import DecodeConfig, decode
from posedec.scoring import greedy_match, oks_matrix, shape_features
from posedec.targets import Pose, SkeletonConfig, TargetSet, build_targets, pose_center


class EmptySceneError(ValueError):
    """Every sampled person fell outside the map."""


def load_template():
    path = resources.files("posedec.data").joinpath("template_skeleton.json")
    with path.open() as f:
        return np.asarray(json.load(f)["keypoints"], dtype=np.float64)


TEMPLATE = load_template()


@dataclass
class SceneSpec:
    map_h: int = 128
    map_w: int = 128
    n_persons: tuple = (1, 4)  # inclusive range, or a single int
    scale_range: tuple = (0.75, 1.5)
    rotation_range: tuple = (-30.0, 30.0)  # degrees
    translation_range: tuple = (-40.0, 40.0)  # map pixels, per axis, from the map center
    noise_sigma: float = 0.0
    offset_noise_sigma: float = 0.0
    min_separation: float = 0.0  # between pose centers, map pixels
    min_visible: int = 4
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.n_persons, int):
            self.n_persons = (self.n_persons, self.n_persons)
        self.n_persons = tuple(int(v) for v in self.n_persons)
        for name in ("n_persons", "scale_range", "rotation_range", "translation_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty")
            setattr(self, name, (lo, hi))
        if self.n_persons[0] < 1:
            raise ValueError("n_persons must be >= 1")
        if self.map_h < 32 or self.map_w < 32:
            raise ValueError("map dimensions must be >= 32")
        if self.noise_sigma < 0 or self.offset_noise_sigma < 0:
            raise ValueError("noise levels must be >= 0")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def scene_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def sample_transform(spec, rng):
    """``(scale, rotation in degrees, (tx, ty))`` drawn uniformly from the spec."""
    scale = rng.uniform(*spec.scale_range)
    angle = rng.uniform(*spec.rotation_range)
    tx, ty = rng.uniform(*spec.translation_range, size=2)
    return scale, angle, (tx, ty)


def place_person(scale, angle, translation, spec, template=TEMPLATE):
    th = np.deg2rad(angle)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    origin = np.array([(spec.map_w - 1) / 2.0, (spec.map_h - 1) / 2.0])
    kps = scale * template @ rot.T + origin + np.asarray(translation)
    inside = (
        (kps[:, 0] >= 0) & (kps[:, 0] <= spec.map_w - 1) & (kps[:, 1] >= 0) & (kps[:, 1] <= spec.map_h - 1)
    )
    return Pose(kps, np.where(inside, 2, 0))


def sample_poses(spec, rng, max_tries=200, max_restarts=50):
    """Persons whose centers are pairwise farther apart than ``min_separation``."""
    for _ in range(max_restarts):
        n = int(rng.integers(spec.n_persons[0], spec.n_persons[1] + 1))
        poses, centers = [], []
        for _ in range(n):
            for _ in range(max_tries):
                pose = place_person(*sample_transform(spec, rng), spec)
                if pose.labeled.sum() < spec.min_visible:
                    continue
                c = pose_center(pose)
                if all(np.hypot(*(c - o)) > spec.min_separation for o in centers):
                    poses.append(pose)
                    centers.append(c)
                    break
            else:
                break
        else:
            if poses:
                return poses
    if spec.min_separation > 0:
        raise EmptySceneError("could not place persons at the requested separation")
    raise EmptySceneError("all persons fell outside the map")


def sample_scene(spec, cfg=None, index=0):
    """Return ``(poses, maps)``; ``maps`` is a TargetSet whose heat and offset
    maps carry the configured noise."""
    cfg = cfg or SkeletonConfig()
    rng = scene_rng(spec.seed, index)
    poses = sample_poses(spec, rng)
    t = build_targets(poses, cfg, spec.map_h, spec.map_w)
    heat, center, offsets = t.kp_heatmaps, t.center_heatmap, t.offset_maps
    if spec.noise_sigma > 0:
        heat = np.clip(heat + rng.normal(0.0, spec.noise_sigma, heat.shape), 0.0, 1.0)
        center = np.clip(center + rng.normal(0.0, spec.noise_sigma, center.shape), 0.0, 1.0)
    if spec.offset_noise_sigma > 0:
        noise = rng.normal(0.0, spec.offset_noise_sigma, offsets.shape)
        offsets = offsets + noise * t.offset_valid
    maps = TargetSet(heat, center, offsets, t.loss_mask, t.offset_valid, t.instance_size)
    return poses, maps


def scored_poses(spec, index, cfg=None, dcfg=None):
    """Decode one scene and pair every decoded pose with its true OKS
    (greedy one-to-one matching; unmatched poses get 0)."""
    cfg = cfg or SkeletonConfig()
    dcfg = dcfg or DecodeConfig()
    gts, maps = sample_scene(spec, cfg, index)
    decoded = decode(maps.kp_heatmaps, maps.center_heatmap, maps.offset_maps, dcfg)
    sim = oks_matrix([p.keypoints for p in decoded], gts, cfg)
    match = greedy_match(sim)
    targets = [float(sim[i, j]) if j >= 0 else 0.0 for i, j in enumerate(match)]
    return decoded, targets


def _scene_examples(args):
    spec, index, cfg, dcfg = args
    decoded, targets = scored_poses(spec, index, cfg, dcfg)
    return [(shape_features(p, cfg), t) for p, t in zip(decoded, targets)]


def make_score_dataset(spec, n_scenes, cfg=None, dcfg=None, start=0, jobs=1):
    """``(feature, true OKS)`` pairs from scenes ``start .. start + n_scenes - 1``."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    cfg = cfg or SkeletonConfig()
    dcfg = dcfg or DecodeConfig()
    work = [(spec, i, cfg, dcfg) for i in range(start, start + n_scenes)]
    per_scene = parallel_map(_scene_examples, work, jobs)
    return [ex for scene in per_scene for ex in scene]


def parallel_map(fn, items, jobs=1):
    """``map`` that keeps input order; uses worker processes when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
