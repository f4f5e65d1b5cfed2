"""Forward warping between posed frames.

Flow comes from reprojecting one frame's world pointmap into another
camera. Warping is softmax splatting: every valid source pixel deposits
its color at the flow target through a bilinear kernel, and colliding
pixels are blended by softmax weights of an importance value (here,
negative normalized depth, so nearer surfaces win occlusions).

Accumulation is plain row-major np.add.at scatter, which keeps results
bit-reproducible; importance logits are max-shifted before exponentiation,
which changes no output (softmax shift invariance extends to the coverage
test because the threshold applies to the shifted denominator).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyHistoryError,
    EmptyListError,
    InvalidParamsError,
    ShapeMismatchError,
)
from .rasters import DepthMap, FlowField, ImageBuffer, Pointmap
from .scene import CameraIntrinsics, CameraPose, project_points

DEFAULT_EPS_COV = 1e-4
DEFAULT_SHARPNESS = 10.0
DEFAULT_DECAY = 1.0


def flow_from_pointmaps(pointmap: Pointmap, pose_j: CameraPose,
                        intrinsics_j: CameraIntrinsics, z_min: float = 1e-6,
                        margin: float = 0.0) -> FlowField:
    """Flow from the pointmap's own pixels into camera j.

    Pixels are invalid (never an error) when the world point is missing,
    lands behind the camera (z <= z_min), or projects outside the target
    bounds shrunk by ``margin`` pixels.
    """
    h, w = pointmap.height, pointmap.width
    uv, z = project_points(intrinsics_j, pose_j, pointmap.data.astype(np.float64))
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    with np.errstate(invalid="ignore"):
        ok = (pointmap.validity & np.isfinite(z) & (z > z_min)
              & (uv[..., 0] >= margin) & (uv[..., 0] <= w - 1 - margin)
              & (uv[..., 1] >= margin) & (uv[..., 1] <= h - 1 - margin))
    flow = np.stack([uv[..., 0] - cols, uv[..., 1] - rows], axis=-1)
    flow = flow.astype(np.float32)
    flow[~ok] = np.nan
    return FlowField(flow, ok)


@dataclass
class WarpResult:
    image: ImageBuffer
    mask: np.ndarray
    weight: np.ndarray
    dropped_mass: float = 0.0

    def coverage(self) -> float:
        return float(self.mask.mean())


def importance_from_depth(depth: DepthMap) -> np.ndarray:
    """Negative depth normalized to [-1, 0]; invalid pixels get 0.

    Nearest valid depth maps to 0 and farthest to -1, so with positive
    sharpness the softmax favors nearer surfaces. A constant depth map
    degenerates to all zeros (plain averaging).
    """
    z = np.zeros((depth.height, depth.width), dtype=np.float64)
    if depth.validity.any():
        vals = depth.data[depth.validity].astype(np.float64)
        lo, hi = float(vals.min()), float(vals.max())
        if hi > lo:
            z[depth.validity] = -(vals - lo) / (hi - lo)
    return z


def softmax_splat(image: ImageBuffer, flow: FlowField, importance: np.ndarray,
                  eps_cov: float = DEFAULT_EPS_COV,
                  sharpness: float = DEFAULT_SHARPNESS) -> WarpResult:
    """Forward-warp ``image`` along ``flow`` with softmax-weighted blending."""
    h, w, c = image.data.shape
    if (flow.height, flow.width) != (h, w):
        raise ShapeMismatchError(
            f"flow {flow.width}x{flow.height} vs image {w}x{h}")
    imp = np.asarray(importance, dtype=np.float64)
    if imp.shape != (h, w):
        raise ShapeMismatchError(
            f"importance {imp.shape} vs image {(h, w)}")

    valid = flow.validity & np.isfinite(imp)
    num = np.zeros((h, w, c), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    kmass = np.zeros((h, w), dtype=np.float64)
    dropped = 0.0
    if valid.any():
        logits = sharpness * imp[valid]
        weights = np.exp(logits - logits.max())
        src_rows, src_cols = np.nonzero(valid)
        colors = image.data[valid].astype(np.float64)
        qx = src_cols + flow.flow[valid][:, 0].astype(np.float64)
        qy = src_rows + flow.flow[valid][:, 1].astype(np.float64)
        x0 = np.floor(qx).astype(np.int64)
        y0 = np.floor(qy).astype(np.int64)
        fx = qx - x0
        fy = qy - y0
        for dy, dx, kern in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                             (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            ty = y0 + dy
            tx = x0 + dx
            mass = weights * kern
            inside = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
            dropped += float(mass[~inside].sum())
            if not inside.any():
                continue
            np.add.at(den, (ty[inside], tx[inside]), mass[inside])
            np.add.at(kmass, (ty[inside], tx[inside]), kern[inside])
            np.add.at(num, (ty[inside], tx[inside]),
                      mass[inside, None] * colors[inside])

    # Coverage means "received any splatted mass": it is judged on the
    # importance-free kernel mass, relative to the frame's peak, so a pixel
    # fed only by the deepest surface still counts as covered and uniform
    # importance shifts cannot flip the mask. The weight channel keeps the
    # softmax denominator used for color blending.
    peak = kmass.max()
    mask = (kmass > eps_cov * peak if peak > 0.0
            else np.zeros((h, w), dtype=bool))
    out = np.zeros((h, w, c), dtype=np.float64)
    out[mask] = num[mask] / den[mask, None]
    out = np.clip(out, 0.0, 1.0)
    return WarpResult(ImageBuffer(out.astype(np.float32)), mask, den, dropped)


def blend_history(warps: list[tuple[WarpResult, int]],
                  gamma: float = DEFAULT_DECAY) -> WarpResult:
    """Blend warped candidates with weights exp(-gamma * (age - 1)).

    Only warps covering a pixel contribute there; weights renormalize per
    pixel, so the newest contributing frame always dominates by the same
    ratio regardless of how many older frames cover the pixel.
    """
    if not warps:
        raise EmptyListError("no warps to blend")
    h, w, c = warps[0][0].image.data.shape
    num = np.zeros((h, w, c), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    weight_sum = np.zeros((h, w), dtype=np.float64)
    for warp, age in warps:
        if warp.image.data.shape != (h, w, c):
            raise DimensionMismatchError("warps must share dimensions")
        if age < 1:
            raise InvalidParamsError(f"age must be >= 1, got {age}")
        wgt = np.exp(-gamma * (age - 1))
        num += np.where(warp.mask[..., None], wgt * warp.image.data, 0.0)
        den += np.where(warp.mask, wgt, 0.0)
        weight_sum += np.where(warp.mask, warp.weight, 0.0)
    mask = den > 0.0
    out = np.zeros((h, w, c), dtype=np.float64)
    out[mask] = num[mask] / den[mask, None]
    out = np.clip(out, 0.0, 1.0)
    return WarpResult(ImageBuffer(out.astype(np.float32)), mask, weight_sum,
                      sum(wp.dropped_mass for wp, _ in warps))


class Strategy(Enum):
    LAST_ONLY = "last"
    ALL_HISTORY = "all"
    LAST_PLUS_TWO_RANDOM = "ours"


@dataclass(frozen=True)
class FrameSelection:
    strategy: Strategy
    indices: tuple[int, ...]


def select_frames(j: int, history: list[int], strategy: Strategy,
                  rng: np.random.Generator) -> FrameSelection:
    """Choose which stylized frames to warp toward target j.

    The previous frame j-1 is always included; the "ours" strategy adds
    up to two extra history frames sampled uniformly without replacement.
    """
    if not history:
        raise EmptyHistoryError(f"no stylized history before frame {j}")
    if max(history) != j - 1:
        raise InvalidParamsError(
            f"history must end at frame {j - 1}, got max {max(history)}")
    if strategy is Strategy.LAST_ONLY:
        chosen = [j - 1]
    elif strategy is Strategy.ALL_HISTORY:
        chosen = sorted(history)
    elif strategy is Strategy.LAST_PLUS_TWO_RANDOM:
        rest = sorted(set(history) - {j - 1})
        take = min(2, len(rest))
        extras = (rng.choice(len(rest), size=take, replace=False)
                  if take else np.empty(0, dtype=np.int64))
        chosen = sorted({j - 1, *(rest[int(i)] for i in extras)})
    else:
        raise InvalidParamsError(f"unknown strategy {strategy!r}")
    return FrameSelection(strategy, tuple(chosen))


@dataclass
class RefinerCondition:
    """5-channel refiner input: warped RGB, coverage mask, normalized depth."""

    channels: np.ndarray

    def __post_init__(self) -> None:
        self.channels = np.ascontiguousarray(self.channels, dtype=np.float32)
        if self.channels.ndim != 3 or self.channels.shape[2] != 5:
            raise DimensionMismatchError(
                f"condition must be HxWx5, got {self.channels.shape}")
        m = self.channels[:, :, 3]
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("mask channel must be binary")
        d = self.channels[:, :, 4]
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("depth channel must lie in [0, 1]")

    @property
    def warped(self) -> np.ndarray:
        return self.channels[:, :, :3]

    @property
    def mask(self) -> np.ndarray:
        return self.channels[:, :, 3] == 1.0

    @property
    def depth(self) -> np.ndarray:
        return self.channels[:, :, 4]


def compose_condition(warped: WarpResult, depth: DepthMap) -> RefinerCondition:
    """Stack warp output and per-frame [0,1]-normalized depth for a refiner.

    A constant (or entirely invalid) depth map normalizes to all zeros.
    """
    h, w, _ = warped.image.data.shape
    if (depth.height, depth.width) != (h, w):
        raise DimensionMismatchError(
            f"depth {depth.width}x{depth.height} vs warp {w}x{h}")
    norm = np.zeros((h, w), dtype=np.float32)
    if depth.validity.any():
        vals = depth.data[depth.validity]
        lo, hi = float(vals.min()), float(vals.max())
        if hi > lo:
            norm[depth.validity] = (vals - lo) / (hi - lo)
    channels = np.concatenate([warped.image.data,
                               warped.mask[..., None].astype(np.float32),
                               norm[..., None]], axis=2)
    return RefinerCondition(channels)
