"""Scene manifests: camera models, frame records, JSON load/save.

A scene is a JSON manifest listing frames, each frame pointing at raster
files (image, depth, pointmap, segmentation) and carrying intrinsics and a
world-to-camera pose. Loading is eager and cross-validated so downstream
code never sees mismatched rasters.

Pixel convention: pixel (row, col) has its center at continuous image
coordinate (u, v) = (col, row). Projection of a world point X with pose
(R, t) is u = fx * x/z + cx, v = fy * y/z + cy where (x, y, z) = R X + t.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rasters
from .errors import (
    DimensionMismatchError,
    EmptyListError,
    InvalidParamsError,
    MalformedHeaderError,
    MissingFileError,
    UnknownLabelIdError,
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise InvalidParamsError("focal lengths must be positive")
        for name in ("fx", "fy", "cx", "cy"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParamsError(f"intrinsics field {name} is not finite")


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(trans)):
            raise InvalidParamsError("pose contains non-finite values")
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-6:
            raise InvalidParamsError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise InvalidParamsError("rotation determinant is not +1")

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation


def project_points(intrinsics: CameraIntrinsics, pose: CameraPose,
                   points_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project world points to (..., 2) pixel (u, v) plus camera-space depth."""
    cam = pose.world_to_camera(points_world)
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[..., 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1), z


def backproject_pixels(intrinsics: CameraIntrinsics, pose: CameraPose,
                       u: np.ndarray, v: np.ndarray,
                       depth: np.ndarray) -> np.ndarray:
    """Lift pixel coordinates with camera-space depth back to world points."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    cam = np.stack([(u - intrinsics.cx) / intrinsics.fx * z,
                    (v - intrinsics.cy) / intrinsics.fy * z,
                    z], axis=-1)
    return pose.camera_to_world(cam)


@dataclass
class FrameRecord:
    image_path: str
    depth_path: str
    pointmap_path: str
    segmentation_path: str
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image: rasters.ImageBuffer | None = None
    depth: rasters.DepthMap | None = None
    pointmap: rasters.Pointmap | None = None
    segmentation: rasters.SemanticMap | None = None


@dataclass
class SceneManifest:
    frames: list[FrameRecord]
    label_table: dict[int, str]
    root: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        if not self.frames:
            raise EmptyListError("a scene needs at least one frame")
        # Resolution agreement can only be judged on frames whose buffers
        # are in memory; path-only records are re-checked by load_scene.
        first = None
        for i, fr in enumerate(self.frames):
            if fr.image is None:
                continue
            size = (fr.image.width, fr.image.height)
            if first is None:
                first = (i, size)
            elif size != first[1]:
                raise _frame_error(
                    DimensionMismatchError, i, "image",
                    f"is {size[0]}x{size[1]}, frame {first[0]} is "
                    f"{first[1][0]}x{first[1][1]}")

    @property
    def width(self) -> int:
        return self.frames[0].image.width

    @property
    def height(self) -> int:
        return self.frames[0].image.height


def _frame_error(cls, index: int, fieldname: str, detail: str):
    return cls(f"frame {index}, field '{fieldname}': {detail}")


def _require(doc: dict, key: str, index: int):
    if key not in doc:
        raise _frame_error(MalformedHeaderError, index, key, "missing key")
    return doc[key]


def manifest_to_dict(scene: SceneManifest) -> dict:
    """JSON-serializable view of a manifest; stable ordering for byte diffs."""
    frames = []
    for fr in scene.frames:
        frames.append({
            "image": fr.image_path,
            "depth": fr.depth_path,
            "pointmap": fr.pointmap_path,
            "segmentation": fr.segmentation_path,
            "intrinsics": {"fx": fr.intrinsics.fx, "fy": fr.intrinsics.fy,
                           "cx": fr.intrinsics.cx, "cy": fr.intrinsics.cy},
            "pose": {"R": [float(x) for x in fr.pose.rotation.reshape(9)],
                     "t": [float(x) for x in fr.pose.translation]},
        })
    labels = {str(k): v for k, v in sorted(scene.label_table.items())}
    return {"frames": frames, "labels": labels}


def save_scene(scene: SceneManifest, manifest_path: str | Path,
               write_rasters: bool = True) -> None:
    """Write the manifest JSON and, by default, every referenced raster."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    root = manifest_path.parent
    if write_rasters:
        for fr in scene.frames:
            pairs = ((fr.image, fr.image_path), (fr.depth, fr.depth_path),
                     (fr.pointmap, fr.pointmap_path),
                     (fr.segmentation, fr.segmentation_path))
            for buf, rel in pairs:
                if buf is None:
                    raise InvalidParamsError(
                        f"cannot save scene: raster '{rel}' not loaded")
                target = root / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                rasters.write_raster(buf, target)
    text = json.dumps(manifest_to_dict(scene), indent=2, sort_keys=True)
    manifest_path.write_text(text + "\n", encoding="utf-8")


def load_scene(manifest_path: str | Path) -> SceneManifest:
    """Parse a manifest, load every raster, and cross-validate the scene.

    Accepts either the manifest file itself or a scene directory that
    contains one.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise MissingFileError(f"no such manifest: {manifest_path}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"{manifest_path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "frames" not in doc or "labels" not in doc:
        raise MalformedHeaderError(
            f"{manifest_path}: manifest needs top-level 'frames' and 'labels'")
    if not isinstance(doc["frames"], list) or not doc["frames"]:
        raise MalformedHeaderError(f"{manifest_path}: 'frames' must be a non-empty list")

    try:
        label_table = {int(k): str(v) for k, v in doc["labels"].items()}
    except (AttributeError, TypeError, ValueError) as exc:
        raise MalformedHeaderError(
            f"{manifest_path}: 'labels' must map integer ids to strings") from exc

    root = manifest_path.parent
    frames: list[FrameRecord] = []
    for i, entry in enumerate(doc["frames"]):
        if not isinstance(entry, dict):
            raise _frame_error(MalformedHeaderError, i, "frames", "entry is not an object")
        intr_doc = _require(entry, "intrinsics", i)
        pose_doc = _require(entry, "pose", i)
        try:
            intrinsics = CameraIntrinsics(float(intr_doc["fx"]), float(intr_doc["fy"]),
                                          float(intr_doc["cx"]), float(intr_doc["cy"]))
        except (KeyError, TypeError, ValueError, InvalidParamsError) as exc:
            raise _frame_error(MalformedHeaderError, i, "intrinsics", str(exc)) from exc
        try:
            rot = np.asarray(pose_doc["R"], dtype=np.float64)
            trans = np.asarray(pose_doc["t"], dtype=np.float64)
            if rot.shape != (9,) or trans.shape != (3,):
                raise ValueError("pose needs 9 rotation and 3 translation numbers")
            pose = CameraPose(rot.reshape(3, 3), trans)
        except (KeyError, TypeError, ValueError, InvalidParamsError) as exc:
            raise _frame_error(MalformedHeaderError, i, "pose", str(exc)) from exc

        record = FrameRecord(
            image_path=str(_require(entry, "image", i)),
            depth_path=str(_require(entry, "depth", i)),
            pointmap_path=str(_require(entry, "pointmap", i)),
            segmentation_path=str(_require(entry, "segmentation", i)),
            intrinsics=intrinsics, pose=pose)

        loaded = {}
        wanted = {"image": (record.image_path, rasters.ImageBuffer),
                  "depth": (record.depth_path, rasters.DepthMap),
                  "pointmap": (record.pointmap_path, rasters.Pointmap),
                  "segmentation": (record.segmentation_path, rasters.SemanticMap)}
        for fieldname, (rel, expected) in wanted.items():
            try:
                buf = rasters.read_raster(root / rel)
            except (MissingFileError, MalformedHeaderError) as exc:
                raise _frame_error(type(exc), i, fieldname, str(exc)) from exc
            if not isinstance(buf, expected):
                raise _frame_error(MalformedHeaderError, i, fieldname,
                                   f"expected {expected.__name__}, file holds "
                                   f"{type(buf).__name__}")
            loaded[fieldname] = buf
        record.image = loaded["image"]
        record.depth = loaded["depth"]
        record.pointmap = loaded["pointmap"]
        record.segmentation = loaded["segmentation"]

        w, h = record.image.width, record.image.height
        for fieldname in ("depth", "pointmap", "segmentation"):
            buf = loaded[fieldname]
            if (buf.width, buf.height) != (w, h):
                raise _frame_error(
                    DimensionMismatchError, i, fieldname,
                    f"is {buf.width}x{buf.height}, image is {w}x{h}")

        ids = set(np.unique(record.segmentation.labels).tolist())
        unknown = ids - set(label_table)
        if unknown:
            raise _frame_error(UnknownLabelIdError, i, "segmentation",
                               f"label ids {sorted(unknown)} not in label table")
        record.segmentation = rasters.SemanticMap(record.segmentation.labels,
                                                  dict(label_table))
        frames.append(record)

    w0, h0 = frames[0].image.width, frames[0].image.height
    for i, fr in enumerate(frames[1:], start=1):
        if (fr.image.width, fr.image.height) != (w0, h0):
            raise _frame_error(DimensionMismatchError, i, "image",
                               f"is {fr.image.width}x{fr.image.height}, frame 0 "
                               f"is {w0}x{h0}")
    return SceneManifest(frames=frames, label_table=label_table, root=root)
