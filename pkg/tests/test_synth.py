import numpy as np
import pytest

from posedec.synth import (
    EmptySceneError,
    SceneSpec,
    make_score_dataset,
    sample_scene,
    sample_transform,
    scene_rng,
)
from posedec.targets import build_targets, pose_center
from posedec.tensor import encode_tensor


def test_zero_noise_maps_equal_targets(coco):
    spec = SceneSpec(seed=4)
    poses, maps = sample_scene(spec, coco, index=2)
    t = build_targets(poses, coco, spec.map_h, spec.map_w)
    for name in ("kp_heatmaps", "center_heatmap", "offset_maps", "loss_mask", "offset_valid"):
        np.testing.assert_array_equal(getattr(maps, name), getattr(t, name))


def test_seeded_scene_is_reproducible(coco):
    spec = SceneSpec(noise_sigma=0.05, offset_noise_sigma=2.0, seed=99)
    a = sample_scene(spec, coco, 5)
    b = sample_scene(spec, coco, 5)
    assert encode_tensor(a[1].kp_heatmaps) == encode_tensor(b[1].kp_heatmaps)
    assert encode_tensor(a[1].offset_maps) == encode_tensor(b[1].offset_maps)
    assert [p.to_coco() for p in a[0]] == [p.to_coco() for p in b[0]]
    c = sample_scene(spec, coco, 6)
    assert encode_tensor(a[1].kp_heatmaps) != encode_tensor(c[1].kp_heatmaps)


def test_scale_range_respected():
    spec = SceneSpec()
    rng = scene_rng(0, 0)
    draws = np.array([sample_transform(spec, rng) for _ in range(1000)], dtype=object)
    scales = draws[:, 0].astype(float)
    angles = draws[:, 1].astype(float)
    assert scales.min() >= 0.75 and scales.max() <= 1.5
    assert angles.min() >= -30 and angles.max() <= 30


def test_noise_levels(coco):
    spec = SceneSpec(noise_sigma=0.05, offset_noise_sigma=2.0, seed=1)
    poses, maps = sample_scene(spec, coco)
    t = build_targets(poses, coco, spec.map_h, spec.map_w)
    assert maps.kp_heatmaps.min() >= 0 and maps.kp_heatmaps.max() <= 1
    invalid = t.offset_valid[0] == 0
    np.testing.assert_array_equal(maps.offset_maps[:, invalid], 0)
    resid = (maps.offset_maps - t.offset_maps)[:, ~invalid]
    assert resid.std() == pytest.approx(2.0, rel=0.1)


def test_min_separation(coco):
    spec = SceneSpec(map_h=160, map_w=160, n_persons=(6, 8), translation_range=(-60, 60), min_separation=37.5)
    for i in range(10):
        poses, _ = sample_scene(spec, coco, i)
        c = np.array([pose_center(p) for p in poses])
        d = np.hypot(*(c[:, None] - c[None]).transpose(2, 0, 1))
        assert np.all(d[np.triu_indices(len(c), 1)] > 37.5)


def test_clipped_keypoints_unlabeled(coco):
    spec = SceneSpec(translation_range=(-60, 60), min_visible=1, seed=3)
    for i in range(20):
        poses, _ = sample_scene(spec, coco, i)
        for p in poses:
            inside = (p.keypoints >= 0).all(axis=1) & (p.keypoints <= 127).all(axis=1)
            np.testing.assert_array_equal(p.labeled, inside)


def test_all_clipped_is_error(coco):
    spec = SceneSpec(translation_range=(500, 600))
    with pytest.raises(EmptySceneError):
        sample_scene(spec, coco)


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(map_h=16)
    with pytest.raises(ValueError):
        SceneSpec(scale_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        SceneSpec.from_dict({"persons": 3})
    assert SceneSpec(n_persons=3).n_persons == (3, 3)


def test_zero_noise_dataset_targets_near_one(coco):
    spec = SceneSpec(map_h=160, map_w=160, n_persons=(1, 4), translation_range=(-50, 50), min_separation=37.5)
    data = make_score_dataset(spec, 5, coco)
    assert data
    assert all(len(f) == 74 for f, _ in data)
    assert min(t for _, t in data) >= 0.99


def test_dataset_needs_scenes():
    with pytest.raises(ValueError):
        make_score_dataset(SceneSpec(), 0)


def test_dataset_parallel_matches_serial(coco):
    spec = SceneSpec(noise_sigma=0.05, offset_noise_sigma=2.0, seed=8)
    a = make_score_dataset(spec, 3, coco, jobs=1)
    b = make_score_dataset(spec, 3, coco, jobs=3)
    assert len(a) == len(b)
    for (fa, ta), (fb, tb) in zip(a, b):
        assert fa.tobytes() == fb.tobytes() and ta == tb
