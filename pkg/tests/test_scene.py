import json

import numpy as np
import pytest

from stylelift.errors import (
    DimensionMismatchError,
    EmptyListError,
    InvalidParamsError,
    MalformedHeaderError,
    MissingFileError,
    UnknownLabelIdError,
)
from stylelift.rasters import DepthMap, ImageBuffer, Pointmap, SemanticMap
from stylelift.scene import (
    CameraIntrinsics,
    CameraPose,
    FrameRecord,
    SceneManifest,
    backproject_pixels,
    load_scene,
    manifest_to_dict,
    project_points,
    save_scene,
)


def _frame(h=8, w=8, label=1, index=0):
    rng = np.random.default_rng(index)
    stem = f"frames/{index:03d}"
    return FrameRecord(
        image_path=f"{stem}_image.rsim",
        depth_path=f"{stem}_depth.rsdp",
        pointmap_path=f"{stem}_points.rspm",
        segmentation_path=f"{stem}_labels.rssg",
        intrinsics=CameraIntrinsics(8.0, 8.0, 3.5, 3.5),
        pose=CameraPose(np.eye(3), np.zeros(3)),
        image=ImageBuffer(rng.random((h, w, 3), dtype=np.float32)),
        depth=DepthMap(np.full((h, w), 2.0, dtype=np.float32)),
        pointmap=Pointmap(rng.standard_normal((h, w, 3)).astype(np.float32)),
        segmentation=SemanticMap(np.full((h, w), label, dtype=np.uint16),
                                 {label: "wall"}),
    )


def _scene(n=1, h=8, w=8):
    return SceneManifest([_frame(h, w, index=i) for i in range(n)],
                         {1: "wall"})


def test_pose_rejects_non_orthonormal():
    with pytest.raises(InvalidParamsError):
        CameraPose(np.eye(3) * 2.0, np.zeros(3))


def test_pose_rejects_reflection():
    r = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(InvalidParamsError):
        CameraPose(r, np.zeros(3))


def test_intrinsics_rejects_nonpositive_focal():
    with pytest.raises(InvalidParamsError):
        CameraIntrinsics(0.0, 8.0, 3.5, 3.5)


def test_project_backproject_round_trip():
    intr = CameraIntrinsics(64.0, 64.0, 31.5, 31.5)
    rot = CameraPose(np.eye(3), np.zeros(3))
    rng = np.random.default_rng(1)
    # points strictly in front of the camera
    pts = rng.uniform([-1, -1, 2], [1, 1, 5], size=(40, 3))
    uv, z = project_points(intr, rot, pts)
    back = backproject_pixels(intr, rot, uv[..., 0], uv[..., 1], z)
    assert np.allclose(back, pts, atol=1e-9)


def test_save_load_round_trip(tmp_path):
    scene = _scene(n=2)
    save_scene(scene, tmp_path / "manifest.json")
    loaded = load_scene(tmp_path / "manifest.json")
    assert len(loaded.frames) == 2
    for a, b in zip(scene.frames, loaded.frames):
        np.testing.assert_array_equal(a.image.data, b.image.data)
        np.testing.assert_array_equal(a.depth.data, b.depth.data)
        np.testing.assert_array_equal(a.pointmap.data, b.pointmap.data)
        np.testing.assert_array_equal(a.segmentation.labels,
                                      b.segmentation.labels)
        assert np.allclose(a.pose.rotation, b.pose.rotation)
    # re-serializing the loaded manifest reproduces the document
    assert manifest_to_dict(loaded) == manifest_to_dict(scene)


def test_minimal_single_frame_manifest(tmp_path):
    save_scene(_scene(n=1), tmp_path / "manifest.json")
    assert len(load_scene(tmp_path / "manifest.json").frames) == 1


def test_load_accepts_scene_directory(tmp_path):
    save_scene(_scene(n=1), tmp_path / "manifest.json")
    assert len(load_scene(tmp_path).frames) == 1


def test_load_empty_directory_reports_missing_manifest(tmp_path):
    with pytest.raises(MissingFileError, match="manifest"):
        load_scene(tmp_path)


def test_missing_raster_names_frame_and_field(tmp_path):
    save_scene(_scene(n=1), tmp_path / "manifest.json")
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["frames"][0]["depth"] = "nope.rsdp"
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(MissingFileError) as err:
        load_scene(tmp_path / "manifest.json")
    assert "frame 0" in str(err.value)
    assert "depth" in str(err.value)


def test_dimension_mismatch_across_rasters(tmp_path):
    scene = _scene(n=1)
    save_scene(scene, tmp_path / "manifest.json")
    # overwrite the depth raster with a 7-row one
    from stylelift import rasters
    rasters.write_raster(DepthMap(np.full((7, 8), 2.0, dtype=np.float32)),
                         tmp_path / "frames" / "000_depth.rsdp")
    with pytest.raises(DimensionMismatchError) as err:
        load_scene(tmp_path / "manifest.json")
    assert "frame 0" in str(err.value)


def test_unknown_label_id_rejected(tmp_path):
    scene = _scene(n=1)
    save_scene(scene, tmp_path / "manifest.json")
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["labels"] = {"2": "sofa"}
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(UnknownLabelIdError):
        load_scene(tmp_path / "manifest.json")


def test_malformed_manifest_json(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(MalformedHeaderError):
        load_scene(tmp_path / "manifest.json")


def test_missing_manifest_file(tmp_path):
    with pytest.raises(MissingFileError):
        load_scene(tmp_path / "absent.json")


def test_scene_requires_frames():
    with pytest.raises(EmptyListError):
        SceneManifest([], {1: "wall"})


def test_frames_must_share_resolution():
    with pytest.raises(DimensionMismatchError):
        SceneManifest([_frame(8, 8, index=0), _frame(8, 10, index=1)],
                      {1: "wall"})
