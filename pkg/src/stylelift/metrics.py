"""Evaluation metrics: depth structure, image reconstruction, pose accuracy.

Depth ratios are reported x100 (AbsRel 8.3 means 8.3%), PSNR assumes a
unit peak, SSIM runs on Rec.601 grayscale with the standard 11x11
sigma=1.5 Gaussian window over valid (fully interior) positions, and pose
comparison similarity-aligns the estimated trajectory first because
stereo-derived trajectories carry no absolute scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import (
    DegenerateAlignmentError,
    DimensionMismatchError,
    EmptyErrorsError,
    EmptyMaskError,
    InvalidParamsError,
    LengthMismatchError,
    TooSmallError,
)
from .rasters import DepthMap, ImageBuffer
from .scene import CameraPose

DELTA1_THRESHOLD = 1.25


@dataclass(frozen=True)
class DepthMetricsReport:
    abs_rel: float
    sq_rel: float
    delta1: float
    valid_pixels: int


def depth_metrics(pred: DepthMap, ref: DepthMap,
                  mask: np.ndarray | None = None) -> DepthMetricsReport:
    """AbsRel / SqRel / delta1 over jointly valid (and masked) pixels."""
    if (pred.width, pred.height) != (ref.width, ref.height):
        raise DimensionMismatchError(
            f"pred {pred.width}x{pred.height} vs ref {ref.width}x{ref.height}")
    use = pred.validity & ref.validity
    if mask is not None:
        use = use & np.asarray(mask, dtype=bool)
    if not use.any():
        raise EmptyMaskError("no valid pixels to compare")
    p = pred.data[use].astype(np.float64)
    r = ref.data[use].astype(np.float64)
    ratio = np.maximum(p / r, r / p)
    return DepthMetricsReport(
        abs_rel=float(100.0 * np.mean(np.abs(p - r) / r)),
        sq_rel=float(100.0 * np.mean((p - r) ** 2 / r)),
        delta1=float(100.0 * np.mean(ratio < DELTA1_THRESHOLD)),
        valid_pixels=int(use.sum()))


def psnr(a: ImageBuffer, b: ImageBuffer,
         mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB; returns inf for identical inputs."""
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(
            f"images disagree: {a.data.shape} vs {b.data.shape}")
    diff = (a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != diff.shape[:2]:
            raise DimensionMismatchError(
                f"mask {m.shape} vs image {diff.shape[:2]}")
        if not m.any():
            raise EmptyMaskError("mask selects no pixels")
        mse = float(diff[m].mean())
    else:
        mse = float(diff.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _rec601_gray(img: ImageBuffer) -> np.ndarray:
    data = img.data.astype(np.float64)
    if img.channels == 1:
        return data[:, :, 0]
    return data @ np.array([0.299, 0.587, 0.114])


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: ImageBuffer, b: ImageBuffer, k1: float = 0.01,
         k2: float = 0.03) -> float:
    """Mean structural similarity over all fully interior 11x11 windows."""
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(
            f"images disagree: {a.data.shape} vs {b.data.shape}")
    if a.height < 11 or a.width < 11:
        raise TooSmallError("ssim needs at least 11x11 images")
    x = _rec601_gray(a)
    y = _rec601_gray(b)
    win = _gaussian_window()
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2

    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    xx = convolve2d(x * x, win, mode="valid") - mu_x ** 2
    yy = convolve2d(y * y, win, mode="valid") - mu_y ** 2
    xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    score = (((2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2))
             / ((mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)))
    return float(score.mean())


# --------------------------------------------------------------------------
# pose comparison
# --------------------------------------------------------------------------

def umeyama_alignment(src: np.ndarray, dst: np.ndarray
                      ) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares similarity (s, R, t) with dst ~ s R src + t."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2:
        raise LengthMismatchError("point sets must be equal-size (n, d)")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    var_s = float((xs ** 2).sum() / src.shape[0])
    if var_s < 1e-18:
        raise DegenerateAlignmentError("all source points coincide")
    cov = xd.T @ xs / src.shape[0]
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(src.shape[1])
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[-1] = -1.0
    rot = u @ np.diag(d) @ vt
    scale = float((s * d).sum() / var_s)
    trans = mu_d - scale * rot @ mu_s
    return scale, rot, trans


def _rotation_angle_deg(r: np.ndarray) -> float:
    c = (np.trace(r) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


@dataclass(frozen=True)
class PoseErrorReport:
    rotation_deg: tuple[float, ...]
    translation_cm: tuple[float, ...]


def pose_errors(est: list[CameraPose], ref: list[CameraPose],
                mode: str = "absolute") -> PoseErrorReport:
    """Per-frame pose deviation after similarity alignment.

    ``absolute`` aligns the estimated camera centers to the reference
    trajectory (closed-form, with scale) and compares each aligned pose.
    ``relative`` compares consecutive-pair relative motions instead, with
    one global scale fitted to the relative translations.
    """
    if len(est) != len(ref):
        raise LengthMismatchError(
            f"{len(est)} estimated vs {len(ref)} reference poses")
    if len(est) < 2:
        raise LengthMismatchError("need at least 2 poses")
    if mode == "absolute":
        centers_e = np.stack([p.center() for p in est])
        centers_r = np.stack([p.center() for p in ref])
        scale, rot_a, trans_a = umeyama_alignment(centers_e, centers_r)
        rot_errs, trans_errs = [], []
        for pose_e, pose_r, c_e in zip(est, ref, centers_e):
            r_aligned = pose_e.rotation @ rot_a.T
            rot_errs.append(_rotation_angle_deg(r_aligned @ pose_r.rotation.T))
            c_aligned = scale * rot_a @ c_e + trans_a
            t_aligned = -r_aligned @ c_aligned
            trans_errs.append(100.0 * float(
                np.linalg.norm(t_aligned - pose_r.translation)))
        return PoseErrorReport(tuple(rot_errs), tuple(trans_errs))
    if mode == "relative":
        rels_e = _relative_motions(est)
        rels_r = _relative_motions(ref)
        num = sum(te @ tr for (_, te), (_, tr) in zip(rels_e, rels_r))
        den = sum(te @ te for _, te in rels_e)
        scale = num / den if den > 1e-18 else 1.0
        rot_errs, trans_errs = [], []
        for (re_, te), (rr, tr) in zip(rels_e, rels_r):
            rot_errs.append(_rotation_angle_deg(re_ @ rr.T))
            trans_errs.append(100.0 * float(np.linalg.norm(scale * te - tr)))
        return PoseErrorReport(tuple(rot_errs), tuple(trans_errs))
    raise InvalidParamsError(f"unknown pose error mode '{mode}'")


def _relative_motions(poses: list[CameraPose]) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for a, b in zip(poses[:-1], poses[1:]):
        rot = b.rotation @ a.rotation.T
        trans = b.translation - rot @ a.translation
        out.append((rot, trans))
    return out


def pose_auc(errors: list[float], threshold: float) -> float:
    """Normalized area under the cumulative error curve, as a percent.

    Equals 100/(n * tau) * sum_i max(0, tau - e_i): each error below the
    threshold contributes the area under its own indicator step.
    """
    if threshold <= 0.0:
        raise InvalidParamsError("threshold must be positive")
    errs = np.asarray(list(errors), dtype=np.float64)
    if errs.size == 0:
        raise EmptyErrorsError("no errors to aggregate")
    if np.any(errs < 0.0) or not np.all(np.isfinite(errs)):
        raise InvalidParamsError("errors must be finite and non-negative")
    return float(100.0 * np.maximum(0.0, threshold - errs).sum()
                 / (errs.size * threshold))
