import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylelift.errors import DegenerateTrajectoryError, InvalidParamsError
from stylelift.scene import (
    CameraPose,
    load_scene,
    manifest_to_dict,
    project_points,
    save_scene,
)
from stylelift.synth import (
    PALETTES,
    PlaneSpec,
    SynthConfig,
    TextureSpec,
    make_trajectory,
    room_planes,
    synth_scene,
)


def _pan_scene(n=4, seed=0, travel=0.6, size=64):
    cfg = SynthConfig(width=size, height=size,
                      trajectory=make_trajectory("pan", n, travel))
    return synth_scene(cfg, seed)


def _bilinear(img, u, v):
    """Gather img at continuous (u, v); caller guarantees in-bounds."""
    h, w = img.shape[:2]
    c0 = np.floor(u).astype(np.int64)
    r0 = np.floor(v).astype(np.int64)
    fc = u - c0
    fr = v - r0
    c1 = np.clip(c0 + 1, 0, w - 1)
    r1 = np.clip(r0 + 1, 0, h - 1)
    out = ((1 - fr)[..., None] * (1 - fc)[..., None] * img[r0, c0]
           + (1 - fr)[..., None] * fc[..., None] * img[r0, c1]
           + fr[..., None] * (1 - fc)[..., None] * img[r1, c0]
           + fr[..., None] * fc[..., None] * img[r1, c1])
    return out


# ------------------------------------------------------------- trajectories

def test_still_trajectory_repeats_one_pose():
    poses = make_trajectory("still", 4)
    for p in poses[1:]:
        assert np.array_equal(p.rotation, poses[0].rotation)
        assert np.array_equal(p.translation, poses[0].translation)


def test_pan_trajectory_spacing():
    poses = make_trajectory("pan", 4, travel=0.6)
    xs = [p.center()[0] for p in poses]
    assert np.allclose(xs, [0.0, 0.2, 0.4, 0.6])


def test_pan_return_is_symmetric():
    poses = make_trajectory("pan_return", 7, travel=0.5)
    xs = [p.center()[0] for p in poses]
    assert np.allclose(xs, xs[::-1])
    assert xs[0] == 0.0
    assert np.isclose(max(xs), 0.5)


def test_orbit_looks_at_fixed_target():
    target = np.array([0.0, 0.0, 2.8])
    for pose in make_trajectory("orbit", 5):
        cam = pose.world_to_camera(target)
        # target sits on the optical axis for every orbit pose
        assert np.allclose(cam[:2], 0.0, atol=1e-9)
        assert cam[2] > 0


def test_trajectory_rejects_bad_args():
    with pytest.raises(InvalidParamsError):
        make_trajectory("pan", 0)
    with pytest.raises(InvalidParamsError):
        make_trajectory("zigzag", 3)


# ---------------------------------------------------------------- rendering

def test_identity_trajectory_gives_zero_flow():
    cfg = SynthConfig(trajectory=make_trajectory("still", 2))
    _, gt = synth_scene(cfg, 0)
    fl = gt.flow(0, 1)
    assert fl.validity.any()
    assert np.abs(fl.flow[fl.validity]).max() < 1e-4


def test_translated_camera_flow_matches_pinhole_arithmetic():
    # one fronto-parallel plane at depth 2, camera slides 0.1 along x:
    # every co-visible pixel moves by (-fx * tx / Z, 0)
    z, tx = 2.0, 0.1
    plane = PlaneSpec((0.0, 0.0, z), (1, 0, 0), (0, 1, 0), 2.5, 2.5,
                      1, "wall", TextureSpec((0.5, 0.5, 0.5)))
    traj = [CameraPose(np.eye(3), np.zeros(3)),
            CameraPose(np.eye(3), np.array([-tx, 0.0, 0.0]))]
    cfg = SynthConfig(planes=[plane], trajectory=traj)
    _, gt = synth_scene(cfg, 0)
    fl = gt.flow(0, 1)
    assert fl.validity.sum() > 1000
    expected_u = -cfg.resolved_intrinsics().fx * tx / z
    assert np.allclose(fl.flow[fl.validity][:, 0], expected_u, atol=1e-3)
    assert np.allclose(fl.flow[fl.validity][:, 1], 0.0, atol=1e-3)


def test_same_seed_bitwise_identical():
    scene_a, _ = _pan_scene(n=3, seed=5)
    scene_b, _ = _pan_scene(n=3, seed=5)
    assert manifest_to_dict(scene_a) == manifest_to_dict(scene_b)
    for fa, fb in zip(scene_a.frames, scene_b.frames):
        assert fa.image.data.tobytes() == fb.image.data.tobytes()
        assert fa.depth.data.tobytes() == fb.depth.data.tobytes()
        assert fa.pointmap.data.tobytes() == fb.pointmap.data.tobytes()
        assert fa.segmentation.labels.tobytes() == fb.segmentation.labels.tobytes()


def test_noise_is_seeded():
    cfg = lambda: SynthConfig(trajectory=make_trajectory("pan", 2),
                              noise_level=0.02)
    a, _ = synth_scene(cfg(), 3)
    b, _ = synth_scene(cfg(), 3)
    c, _ = synth_scene(cfg(), 4)
    assert a.frames[0].image.data.tobytes() == b.frames[0].image.data.tobytes()
    assert a.frames[0].image.data.tobytes() != c.frames[0].image.data.tobytes()


def test_camera_inside_plane_rejected():
    plane = PlaneSpec((0.0, 0.0, 0.0), (1, 0, 0), (0, 1, 0), 1.0, 1.0,
                      1, "wall", TextureSpec((0.5, 0.5, 0.5)))
    cfg = SynthConfig(planes=[plane], trajectory=make_trajectory("still", 1))
    with pytest.raises(DegenerateTrajectoryError):
        synth_scene(cfg, 0)


def test_tiny_resolution_rejected():
    cfg = SynthConfig(width=4, height=4)
    with pytest.raises(InvalidParamsError):
        synth_scene(cfg, 0)


def test_room_planes_presets():
    planes = room_planes()
    assert [p.label_id for p in planes] == [1, 2, 3, 4]
    assert {p.class_name for p in planes} == {"wall", "floor", "sofa", "plant"}
    assert set(PALETTES) == {"daylight", "dusk"}
    with pytest.raises(InvalidParamsError):
        room_planes("noir")


def test_segmentation_covers_label_table():
    scene, _ = _pan_scene(n=2)
    assert scene.label_table[0] == "background"
    for fr in scene.frames:
        ids = set(np.unique(fr.segmentation.labels).tolist())
        assert ids <= set(scene.label_table)


# ------------------------------------------------------------------ oracles

def test_pointmap_reprojects_to_own_pixels():
    scene, gt = _pan_scene(n=3)
    h, w = scene.height, scene.width
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    for i, fr in enumerate(scene.frames):
        uv, z = project_points(fr.intrinsics, fr.pose, gt.points[i])
        ok = gt.valid[i]
        assert np.abs(uv[ok][:, 0] - cols[ok]).max() < 1e-4
        assert np.abs(uv[ok][:, 1] - rows[ok]).max() < 1e-4
        assert np.allclose(z[ok], gt.depths[i][ok], atol=1e-9)


def test_flow_resamples_target_within_texture_tolerance():
    _, gt = _pan_scene(n=4, seed=2)
    h, w = gt.height, gt.width
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    for i, j in ((0, 3), (1, 2), (3, 0)):
        fl = gt.flow(i, j)
        m = fl.validity
        assert m.any()
        u = cols[m] + fl.flow[m][:, 0]
        v = rows[m] + fl.flow[m][:, 1]
        resampled = _bilinear(gt.images[j], u, v)
        mae = np.abs(resampled - gt.images[i][m]).mean()
        assert mae <= 2.0 / 255.0


def test_covisibility_subset_of_valid():
    _, gt = _pan_scene(n=3)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        m = gt.covisibility(i, j)
        assert not (m & ~gt.valid[i]).any()
        fl = gt.flow(i, j).flow
        assert np.isfinite(fl[m]).all()
        assert np.isnan(fl[~m]).all()


def test_synth_manifest_round_trips_through_disk(tmp_path):
    scene, _ = _pan_scene(n=2, seed=7)
    save_scene(scene, tmp_path / "manifest.json")
    loaded = load_scene(tmp_path / "manifest.json")
    assert json.dumps(manifest_to_dict(loaded), sort_keys=True) == \
        json.dumps(manifest_to_dict(scene), sort_keys=True)
    for a, b in zip(scene.frames, loaded.frames):
        assert a.image.data.tobytes() == b.image.data.tobytes()
        assert a.pointmap.data.tobytes() == b.pointmap.data.tobytes()


# --------------------------------------------------------------- properties

@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_texture_sample_stays_in_unit_range(r, g, b, seed):
    tex = TextureSpec((r, g, b))
    rng = np.random.default_rng(seed)
    s = rng.uniform(-5, 5, size=32)
    t = rng.uniform(-5, 5, size=32)
    out = tex.sample(s, t)
    assert out.min() >= 0.0 and out.max() <= 1.0


@given(st.integers(1, 6), st.sampled_from(["still", "pan", "pan_return",
                                           "orbit"]))
@settings(max_examples=20, deadline=None)
def test_trajectories_always_valid_poses(n, kind):
    poses = make_trajectory(kind, n)
    assert len(poses) == n
    for p in poses:
        assert np.abs(p.rotation @ p.rotation.T - np.eye(3)).max() < 1e-9
