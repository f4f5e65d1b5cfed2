import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylelift.errors import (
    DimensionMismatchError,
    EmptyHistoryError,
    EmptyListError,
    InvalidParamsError,
    ShapeMismatchError,
)
from stylelift.rasters import (
    DepthMap,
    FlowField,
    ImageBuffer,
    read_condition_channels,
    write_condition_channels,
)
from stylelift.synth import SynthConfig, make_trajectory, synth_scene
from stylelift.warp import (
    FrameSelection,
    Strategy,
    WarpResult,
    blend_history,
    compose_condition,
    flow_from_pointmaps,
    importance_from_depth,
    select_frames,
    softmax_splat,
)


def _gray(values):
    """Single-channel image from a 2-D array."""
    return ImageBuffer(np.asarray(values, dtype=np.float32)[..., None])


def _flow(h, w, du=0.0, dv=0.0):
    f = np.zeros((h, w, 2), dtype=np.float32)
    f[..., 0] = du
    f[..., 1] = dv
    return FlowField(f, np.ones((h, w), dtype=bool))


def _pan_scene(n=3, seed=0):
    cfg = SynthConfig(trajectory=make_trajectory("pan", n, 0.6))
    return synth_scene(cfg, seed)


# -------------------------------------------------------- flow computation

def test_same_camera_reprojection_is_zero_flow():
    scene, gt = _pan_scene(n=2)
    fr = scene.frames[0]
    fl = flow_from_pointmaps(fr.pointmap, fr.pose, fr.intrinsics)
    assert fl.validity.any()
    assert np.abs(fl.flow[fl.validity]).max() < 1e-4


def test_flow_against_analytic_renderer_correspondence():
    scene, gt = _pan_scene(n=3)
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            fl = flow_from_pointmaps(scene.frames[i].pointmap,
                                     scene.frames[j].pose,
                                     scene.frames[j].intrinsics)
            ref = gt.flow(i, j)
            sel = ref.validity & fl.validity
            assert sel.any()
            dev = np.abs(fl.flow[sel] - ref.flow[sel])
            assert dev.max() < 1e-3


def test_points_behind_camera_are_invalid():
    scene, _ = _pan_scene(n=1)
    fr = scene.frames[0]
    flipped = fr.pose.rotation.copy()
    flipped[2] *= -1.0    # not orthonormal-violating: flip two axes
    flipped[0] *= -1.0
    from stylelift.scene import CameraPose
    pose = CameraPose(flipped, np.zeros(3))
    fl = flow_from_pointmaps(fr.pointmap, pose, fr.intrinsics)
    assert not fl.validity.any()


def test_bounds_margin_shrinks_validity():
    scene, _ = _pan_scene(n=2)
    fr = scene.frames[0]
    pose_j = scene.frames[1].pose
    loose = flow_from_pointmaps(fr.pointmap, pose_j, fr.intrinsics)
    tight = flow_from_pointmaps(fr.pointmap, pose_j, fr.intrinsics, margin=4.0)
    assert tight.validity.sum() < loose.validity.sum()
    assert not (tight.validity & ~loose.validity).any()


# ----------------------------------------------------------------- splats

def test_identity_flow_is_identity_warp():
    rng = np.random.default_rng(0)
    img = ImageBuffer(rng.random((6, 7, 3), dtype=np.float32))
    res = softmax_splat(img, _flow(6, 7), np.zeros((6, 7)))
    assert res.mask.all()
    np.testing.assert_array_equal(res.image.data, img.data)
    assert res.dropped_mass == 0.0


def test_integer_shift_moves_the_pixel():
    img = np.zeros((5, 5))
    img[2, 1] = 1.0
    res = softmax_splat(_gray(img), _flow(5, 5, du=2.0), np.zeros((5, 5)))
    out = res.image.data[..., 0]
    assert out[2, 3] == 1.0
    assert out.sum() == 1.0
    # the two rightmost columns shifted out of frame
    assert not res.mask[:, :2].any()
    assert res.mask[:, 2:].all()
    assert res.dropped_mass > 0.0


def test_collision_blend_hand_case():
    img = _gray([[1.0, 0.0]])
    flow = np.zeros((1, 2, 2), dtype=np.float32)
    flow[0, 1, 0] = -1.0    # both sources land on pixel (0, 0)
    res = softmax_splat(img, FlowField(flow, np.ones((1, 2), bool)),
                        np.array([[math.log(3.0), 0.0]]), sharpness=1.0)
    assert abs(res.image.data[0, 0, 0] - 0.75) < 1e-6
    assert res.mask[0, 0]
    assert not res.mask[0, 1]


def test_nearer_surface_dominates_collision():
    img = _gray([[1.0, 0.0]])
    flow = np.zeros((1, 2, 2), dtype=np.float32)
    flow[0, 1, 0] = -1.0
    depth = DepthMap(np.array([[1.0, 10.0]], dtype=np.float32))
    res = softmax_splat(img, FlowField(flow, np.ones((1, 2), bool)),
                        importance_from_depth(depth), sharpness=10.0)
    assert res.image.data[0, 0, 0] > 0.99


def test_splat_mass_conservation():
    rng = np.random.default_rng(1)
    img = ImageBuffer(rng.random((12, 14, 3), dtype=np.float32))
    flow = rng.uniform(-4, 4, (12, 14, 2)).astype(np.float32)
    validity = rng.random((12, 14)) < 0.8
    flow[~validity] = np.nan
    imp = rng.uniform(-1, 0, (12, 14))
    res = softmax_splat(img, FlowField(flow, validity), imp, sharpness=3.0)
    logits = 3.0 * imp[validity]
    total_in = np.exp(logits - logits.max()).sum()
    assert abs(res.weight.sum() + res.dropped_mass - total_in) \
        <= 1e-4 * total_in


def test_importance_shift_invariance():
    rng = np.random.default_rng(2)
    img = ImageBuffer(rng.random((8, 8, 3), dtype=np.float32))
    flow = rng.uniform(-2, 2, (8, 8, 2)).astype(np.float32)
    fl = FlowField(flow, np.ones((8, 8), bool))
    imp = rng.uniform(-1, 0, (8, 8))
    a = softmax_splat(img, fl, imp)
    b = softmax_splat(img, fl, imp + 123.0)
    np.testing.assert_array_equal(a.mask, b.mask)
    np.testing.assert_allclose(a.image.data, b.image.data, atol=1e-6)


def test_splat_shape_checks():
    img = ImageBuffer(np.zeros((4, 4, 3), dtype=np.float32))
    with pytest.raises(ShapeMismatchError):
        softmax_splat(img, _flow(4, 5), np.zeros((4, 4)))
    with pytest.raises(ShapeMismatchError):
        softmax_splat(img, _flow(4, 4), np.zeros((4, 5)))


# ------------------------------------------------------- depth importance

def test_constant_depth_gives_uniform_importance():
    depth = DepthMap(np.full((4, 4), 2.5, dtype=np.float32))
    np.testing.assert_array_equal(importance_from_depth(depth),
                                  np.zeros((4, 4)))


def test_importance_normalization_endpoints():
    depth = DepthMap(np.array([[1.0, 3.0], [5.0, np.nan]], dtype=np.float32))
    z = importance_from_depth(depth)
    assert z[0, 0] == 0.0
    assert z[1, 0] == -1.0
    assert z[0, 1] == -0.5
    assert z[1, 1] == 0.0    # invalid pixels contribute neutral importance


# ----------------------------------------------------------------- blends

def _warp_of(value, mask, weight=1.0):
    m = np.asarray(mask, dtype=bool)
    img = np.zeros(m.shape + (1,), dtype=np.float32)
    img[m, 0] = value
    return WarpResult(ImageBuffer(img), m, np.where(m, weight, 0.0))


def test_blend_single_warp_passthrough():
    w = _warp_of(0.6, [[True, False], [True, True]])
    out = blend_history([(w, 3)], gamma=0.7)
    np.testing.assert_array_equal(out.image.data, w.image.data)
    np.testing.assert_array_equal(out.mask, w.mask)
    np.testing.assert_array_equal(out.weight, w.weight)


def test_blend_disjoint_masks_union():
    a = _warp_of(1.0, [[True, False]])
    b = _warp_of(0.25, [[False, True]])
    out = blend_history([(a, 1), (b, 5)])
    assert out.mask.all()
    assert out.image.data[0, 0, 0] == 1.0
    assert out.image.data[0, 1, 0] == 0.25


def test_blend_overlap_hand_case():
    a = _warp_of(1.0, [[True]])
    b = _warp_of(0.0, [[True]])
    out = blend_history([(a, 1), (b, 2)], gamma=math.log(2.0))
    assert abs(out.image.data[0, 0, 0] - 2.0 / 3.0) < 1e-6


def test_blend_weights_partition_unity():
    # identical colors must survive any mixture of ages exactly
    warps = [(_warp_of(0.4, [[True, True]]), age) for age in (1, 2, 5, 9)]
    out = blend_history(warps, gamma=1.3)
    np.testing.assert_allclose(out.image.data[..., 0], 0.4, atol=1e-6)


def test_blend_validates_inputs():
    with pytest.raises(EmptyListError):
        blend_history([])
    a = _warp_of(1.0, [[True]])
    b = _warp_of(1.0, [[True, True]])
    with pytest.raises(DimensionMismatchError):
        blend_history([(a, 1), (b, 1)])
    with pytest.raises(InvalidParamsError):
        blend_history([(a, 0)])


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 3.0))
@settings(max_examples=40, deadline=None)
def test_blend_coverage_grows_monotonically(seed, gamma):
    rng = np.random.default_rng(seed)
    warps = [(_warp_of(float(rng.random()), rng.random((4, 4)) < 0.5), age)
             for age in (1, 2, 3)]
    base = blend_history(warps[:2], gamma)
    grown = blend_history(warps, gamma)
    assert (grown.mask | ~base.mask).all()


# -------------------------------------------------------- frame selection

def test_select_short_history():
    sel = select_frames(2, [1], Strategy.LAST_PLUS_TWO_RANDOM,
                        np.random.default_rng(0))
    assert sel.indices == (1,)


def test_select_includes_previous_plus_two():
    rng = np.random.default_rng(1)
    sel = select_frames(5, [1, 2, 3, 4], Strategy.LAST_PLUS_TWO_RANDOM, rng)
    assert 4 in sel.indices
    assert len(sel.indices) == 3
    assert set(sel.indices) <= {1, 2, 3, 4}


def test_select_is_seed_deterministic():
    a = select_frames(9, list(range(1, 9)), Strategy.LAST_PLUS_TWO_RANDOM,
                      np.random.default_rng(7))
    b = select_frames(9, list(range(1, 9)), Strategy.LAST_PLUS_TWO_RANDOM,
                      np.random.default_rng(7))
    assert a == b == FrameSelection(Strategy.LAST_PLUS_TWO_RANDOM, a.indices)


def test_select_fixed_strategies():
    rng = np.random.default_rng(0)
    assert select_frames(4, [1, 2, 3], Strategy.LAST_ONLY, rng).indices == (3,)
    assert select_frames(4, [3, 1, 2], Strategy.ALL_HISTORY,
                         rng).indices == (1, 2, 3)


def test_select_rejects_bad_history():
    rng = np.random.default_rng(0)
    with pytest.raises(EmptyHistoryError):
        select_frames(3, [], Strategy.LAST_ONLY, rng)
    with pytest.raises(InvalidParamsError):
        select_frames(3, [1], Strategy.LAST_ONLY, rng)


@given(st.integers(3, 12), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_selection_always_contains_previous_frame(j, seed):
    history = list(range(1, j))
    sel = select_frames(j, history, Strategy.LAST_PLUS_TWO_RANDOM,
                        np.random.default_rng(seed))
    assert j - 1 in sel.indices
    assert len(sel.indices) == len(set(sel.indices))
    assert len(sel.indices) == min(3, len(history))
    assert set(sel.indices) <= set(history)


# -------------------------------------------------------------- condition

def test_condition_channels_layout():
    img = ImageBuffer(np.full((3, 3, 3), 0.5, dtype=np.float32))
    res = softmax_splat(img, _flow(3, 3), np.zeros((3, 3)))
    depth = DepthMap(np.array([[1.0, 2.0, 3.0]] * 3, dtype=np.float32))
    cond = compose_condition(res, depth)
    assert cond.channels.shape == (3, 3, 5)
    assert (cond.channels[..., 3] == 1.0).all()
    np.testing.assert_allclose(cond.depth[0], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(cond.warped, res.image.data)


def test_condition_constant_depth_normalizes_to_zero():
    img = ImageBuffer(np.zeros((2, 2, 3), dtype=np.float32))
    res = softmax_splat(img, _flow(2, 2), np.zeros((2, 2)))
    cond = compose_condition(res, DepthMap(np.full((2, 2), 4.0, np.float32)))
    assert (cond.depth == 0.0).all()


def test_condition_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    img = ImageBuffer(rng.random((4, 5, 3), dtype=np.float32))
    res = softmax_splat(img, _flow(4, 5, du=0.5), np.zeros((4, 5)))
    depth = DepthMap(rng.uniform(1, 3, (4, 5)).astype(np.float32))
    cond = compose_condition(res, depth)
    write_condition_channels(cond.channels, tmp_path / "c.rscd")
    back = read_condition_channels(tmp_path / "c.rscd")
    assert back.tobytes() == cond.channels.tobytes()


def test_condition_dimension_check():
    img = ImageBuffer(np.zeros((2, 2, 3), dtype=np.float32))
    res = softmax_splat(img, _flow(2, 2), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatchError):
        compose_condition(res, DepthMap(np.ones((3, 3), dtype=np.float32)))
