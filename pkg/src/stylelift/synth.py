"""Synthetic pinhole scenes with analytic ground truth.

Scenes are built from textured planar rectangles rendered by exact
ray-plane intersection, so every geometric quantity downstream code needs
(depth, world pointmaps, pairwise optical flow, co-visibility) has a
closed-form reference value. Textures are low-frequency sinusoids; their
smoothness is what keeps bilinear resampling error well under the warp
round-trip budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import DegenerateTrajectoryError, InvalidParamsError
from .rasters import DepthMap, FlowField, ImageBuffer, Pointmap, SemanticMap
from .scene import (
    CameraIntrinsics,
    CameraPose,
    FrameRecord,
    SceneManifest,
    project_points,
)

_Z_MIN = 1e-6


@dataclass(frozen=True)
class TextureSpec:
    """Band-limited sinusoid over plane-local metric coordinates."""

    base: tuple[float, float, float]
    amplitude: float = 0.18
    freq_u: float = 0.7
    freq_v: float = 0.4
    phases: tuple[float, float, float] = (0.0, 2.1, 4.2)

    def sample(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        arg = 2.0 * math.pi * (self.freq_u * s + self.freq_v * t)
        chans = [np.clip(self.base[c] + self.amplitude * np.sin(arg + self.phases[c]),
                         0.0, 1.0) for c in range(3)]
        return np.stack(chans, axis=-1)


@dataclass(frozen=True)
class PlaneSpec:
    """Finite textured rectangle: center plus two in-plane half-axes."""

    center: tuple[float, float, float]
    u_axis: tuple[float, float, float]
    v_axis: tuple[float, float, float]
    half_u: float
    half_v: float
    label_id: int
    class_name: str
    texture: TextureSpec

    @cached_property
    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(center, unit u, unit v orthogonalized against u, unit normal)."""
        c = np.asarray(self.center, dtype=np.float64)
        u = np.asarray(self.u_axis, dtype=np.float64)
        u = u / np.linalg.norm(u)
        v = np.asarray(self.v_axis, dtype=np.float64)
        v = v - (v @ u) * u
        v = v / np.linalg.norm(v)
        n = np.cross(u, v)
        return c, u, v, n


@dataclass
class SynthConfig:
    width: int = 64
    height: int = 64
    intrinsics: CameraIntrinsics | None = None
    planes: list[PlaneSpec] | None = None
    trajectory: list[CameraPose] | None = None
    noise_level: float = 0.0
    background: tuple[float, float, float] = (0.08, 0.08, 0.10)

    def resolved_intrinsics(self) -> CameraIntrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        return CameraIntrinsics(fx=float(self.width), fy=float(self.width),
                                cx=(self.width - 1) / 2.0,
                                cy=(self.height - 1) / 2.0)


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

PALETTES = {
    "daylight": {
        "wall": TextureSpec((0.55, 0.58, 0.62), 0.14, 0.55, 0.30),
        "floor": TextureSpec((0.46, 0.37, 0.28), 0.13, 0.80, 0.45),
        "sofa": TextureSpec((0.62, 0.20, 0.18), 0.15, 0.90, 0.60),
        "plant": TextureSpec((0.20, 0.46, 0.22), 0.16, 1.00, 0.70),
    },
    "dusk": {
        "wall": TextureSpec((0.28, 0.30, 0.48), 0.14, 0.50, 0.35),
        "floor": TextureSpec((0.52, 0.44, 0.38), 0.13, 0.70, 0.50),
        "sofa": TextureSpec((0.22, 0.32, 0.58), 0.15, 0.85, 0.55),
        "plant": TextureSpec((0.52, 0.42, 0.20), 0.16, 0.95, 0.65),
    },
}


def room_planes(palette: str = "daylight") -> list[PlaneSpec]:
    """Four-plane room: back wall, floor strip, sofa and plant boards."""
    if palette not in PALETTES:
        raise InvalidParamsError(f"unknown palette '{palette}'")
    tex = PALETTES[palette]
    return [
        PlaneSpec((0.0, 0.0, 3.4), (1, 0, 0), (0, 1, 0), 3.2, 2.2,
                  1, "wall", tex["wall"]),
        PlaneSpec((0.0, 1.0, 2.3), (1, 0, 0), (0, 0, 1), 3.2, 1.1,
                  2, "floor", tex["floor"]),
        PlaneSpec((-0.55, 0.45, 2.6), (1, 0, 0), (0, 1, 0), 0.6, 0.5,
                  3, "sofa", tex["sofa"]),
        PlaneSpec((0.95, 0.25, 2.9), (1, 0, 0), (0, 1, 0), 0.35, 0.7,
                  4, "plant", tex["plant"]),
    ]


def _pose_at(x: float) -> CameraPose:
    # camera centered at (x, 0, 0) looking down +z: t = -R @ C
    return CameraPose(np.eye(3), np.array([-x, 0.0, 0.0]))


def _look_at_pose(center: np.ndarray, target: np.ndarray) -> CameraPose:
    fwd = target - center
    fwd = fwd / np.linalg.norm(fwd)
    up_hint = np.array([0.0, 1.0, 0.0])
    right = np.cross(up_hint, fwd)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return CameraPose(rot, -rot @ center)


def make_trajectory(kind: str, n_frames: int, travel: float = 0.6
                    ) -> list[CameraPose]:
    """Camera paths: still, pan, pan_return (out-and-back) and orbit."""
    if n_frames < 1:
        raise InvalidParamsError("trajectory needs at least one frame")
    if kind == "still":
        return [_pose_at(0.0) for _ in range(n_frames)]
    if kind == "pan":
        if n_frames == 1:
            return [_pose_at(0.0)]
        return [_pose_at(travel * k / (n_frames - 1)) for k in range(n_frames)]
    if kind == "pan_return":
        if n_frames == 1:
            return [_pose_at(0.0)]
        xs = [travel * (1.0 - abs(2.0 * k / (n_frames - 1) - 1.0))
              for k in range(n_frames)]
        return [_pose_at(x) for x in xs]
    if kind == "orbit":
        target = np.array([0.0, 0.0, 2.8])
        radius = 2.8
        if n_frames == 1:
            angles = [0.0]
        else:
            half = math.radians(8.0) * max(travel / 0.6, 1e-9)
            angles = [-half + 2.0 * half * k / (n_frames - 1)
                      for k in range(n_frames)]
        poses = []
        for a in angles:
            center = target + radius * np.array([math.sin(a), 0.0, -math.cos(a)])
            poses.append(_look_at_pose(center, target))
        return poses
    raise InvalidParamsError(f"unknown trajectory kind '{kind}'")


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def _render_frame(config: SynthConfig, intr: CameraIntrinsics, pose: CameraPose):
    h, w = config.height, config.width
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    d_cam = np.stack([(cols - intr.cx) / intr.fx,
                      (rows - intr.cy) / intr.fy,
                      np.ones_like(cols)], axis=-1)
    d_world = d_cam @ pose.rotation  # R^T applied row-wise
    origin = pose.center()

    depth = np.full((h, w), np.inf)
    labels = np.zeros((h, w), dtype=np.uint16)
    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = np.asarray(config.background)
    points = np.full((h, w, 3), np.nan)

    for plane in config.planes:
        c, u, v, n = plane.frame
        denom = d_world @ n
        numer = (c - origin) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = numer / denom
        hit = np.isfinite(tau) & (tau > _Z_MIN) & (tau < depth)
        if not hit.any():
            continue
        pts = origin + tau[..., None] * d_world
        rel = pts - c
        s = rel @ u
        t = rel @ v
        hit &= (np.abs(s) <= plane.half_u) & (np.abs(t) <= plane.half_v)
        if not hit.any():
            continue
        depth[hit] = tau[hit]
        labels[hit] = plane.label_id
        points[hit] = pts[hit]
        image[hit] = plane.texture.sample(s[hit], t[hit])

    valid = np.isfinite(depth)
    depth[~valid] = np.nan
    return image, depth, points, labels, valid


def _check_camera_clearance(config: SynthConfig) -> None:
    for idx, pose in enumerate(config.trajectory):
        origin = pose.center()
        for plane in config.planes:
            c, u, v, n = plane.frame
            rel = origin - c
            if (abs(rel @ n) < 1e-6 and abs(rel @ u) <= plane.half_u + 1e-6
                    and abs(rel @ v) <= plane.half_v + 1e-6):
                raise DegenerateTrajectoryError(
                    f"pose {idx} places the camera inside plane "
                    f"'{plane.class_name}'")


@dataclass
class GroundTruth:
    """Float64 render state plus analytic pairwise flow / co-visibility.

    A pixel counts as co-visible in the target frame only if its whole
    5x5 neighbourhood survives the occlusion and footprint checks, which
    keeps resampling tests away from plane boundaries and out of reach of
    splat bleed from adjacent occluders.
    """

    width: int
    height: int
    intrinsics: CameraIntrinsics
    poses: list[CameraPose]
    depths: list[np.ndarray]
    points: list[np.ndarray]
    labels: list[np.ndarray]
    valid: list[np.ndarray]
    images: list[np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    def flow(self, i: int, j: int) -> FlowField:
        """Ground-truth flow i -> j; validity is the co-visibility mask."""
        key = (i, j)
        if key not in self._cache:
            self._cache[key] = self._compute_flow(i, j)
        return self._cache[key]

    def covisibility(self, i: int, j: int) -> np.ndarray:
        return self.flow(i, j).validity

    def _compute_flow(self, i: int, j: int) -> FlowField:
        h, w = self.height, self.width
        uv, z = project_points(self.intrinsics, self.poses[j], self.points[i])
        u, v = uv[..., 0], uv[..., 1]
        cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                                 np.arange(h, dtype=np.float64))

        ok = self.valid[i] & np.isfinite(z) & (z > _Z_MIN)
        with np.errstate(invalid="ignore"):
            ok &= (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

        uc = np.where(ok, u, 0.0)
        vc = np.where(ok, v, 0.0)
        r0 = np.floor(vc).astype(np.int64)
        c0 = np.floor(uc).astype(np.int64)
        fr = vc - r0
        fc = uc - c0
        r1 = np.clip(r0 + 1, 0, h - 1)
        c1 = np.clip(c0 + 1, 0, w - 1)
        corners = ((r0, c0, (1 - fr) * (1 - fc)), (r0, c1, (1 - fr) * fc),
                   (r1, c0, fr * (1 - fc)), (r1, c1, fr * fc))

        # occlusion: interpolated target depth must match the projected depth
        depth_j = np.where(self.valid[j], self.depths[j], 0.0)
        num = np.zeros((h, w))
        den = np.zeros((h, w))
        footprint_ok = np.ones((h, w), dtype=bool)
        lab_i = self.labels[i]
        lab_j = self.labels[j]
        for rr, cc, wt in corners:
            num += wt * depth_j[rr, cc]
            den += wt
            touched = wt > 0.0
            footprint_ok &= (~touched) | (self.valid[j][rr, cc]
                                          & (lab_j[rr, cc] == lab_i))
        with np.errstate(invalid="ignore"):
            z_interp = num / np.where(den > 0, den, 1.0)
            depth_ok = np.abs(z_interp - z) <= np.maximum(0.02, 0.02 * np.abs(z))
        # Forward splats bleed up to a pixel of foreground color past an
        # occluder's own footprint, on pixels that are geometrically
        # co-visible. Requiring a label-uniform 3x3 patch in this frame,
        # then eroding twice, keeps the mask out of halo reach.
        lab_max = ndimage.maximum_filter(lab_i, size=3, mode="nearest")
        lab_min = ndimage.minimum_filter(lab_i, size=3, mode="nearest")
        covis = ok & footprint_ok & depth_ok & (lab_max == lab_min)
        covis = ndimage.binary_erosion(covis, structure=np.ones((3, 3), bool),
                                       border_value=0, iterations=2)

        flow = np.stack([u - cols, v - rows], axis=-1).astype(np.float32)
        flow[~covis] = np.nan
        return FlowField(flow, covis)


def synth_scene(config: SynthConfig, seed: int) -> tuple[SceneManifest, GroundTruth]:
    """Render a deterministic planar scene; returns manifest plus oracles."""
    if config.planes is None:
        config.planes = room_planes()
    if config.trajectory is None:
        config.trajectory = make_trajectory("pan", 5)
    if config.width < 8 or config.height < 8:
        raise InvalidParamsError("resolution must be at least 8x8")
    if not config.trajectory:
        raise InvalidParamsError("trajectory must contain at least one pose")
    _check_camera_clearance(config)

    rng = np.random.default_rng(seed)
    intr = config.resolved_intrinsics()
    label_table = {0: "background"}
    for plane in config.planes:
        if plane.label_id == 0:
            raise InvalidParamsError("plane label ids must be nonzero")
        label_table[plane.label_id] = plane.class_name

    frames: list[FrameRecord] = []
    gt = GroundTruth(config.width, config.height, intr,
                     list(config.trajectory), [], [], [], [], [])
    for idx, pose in enumerate(config.trajectory):
        image, depth, points, labels, valid = _render_frame(config, intr, pose)
        if config.noise_level > 0.0:
            image = image + rng.normal(0.0, config.noise_level, image.shape)
        image = np.clip(image, 0.0, 1.0)
        gt.depths.append(depth)
        gt.points.append(points)
        gt.labels.append(labels)
        gt.valid.append(valid)
        gt.images.append(image)
        stem = f"frames/{idx:03d}"
        frames.append(FrameRecord(
            image_path=f"{stem}_image.rsim",
            depth_path=f"{stem}_depth.rsdp",
            pointmap_path=f"{stem}_points.rspm",
            segmentation_path=f"{stem}_labels.rssg",
            intrinsics=intr, pose=pose,
            image=ImageBuffer(image.astype(np.float32)),
            depth=DepthMap(depth.astype(np.float32)),
            pointmap=Pointmap(points.astype(np.float32)),
            segmentation=SemanticMap(labels, dict(label_table))))

    manifest = SceneManifest(frames=frames, label_table=label_table)
    return manifest, gt
