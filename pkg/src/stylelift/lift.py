"""Autoregressive style propagation across posed frames.

Each new frame is assembled from warps of previously stylized frames:
select sources, forward-splat each, blend by recency, then hand the
5-channel condition to a refiner that fills whatever the warps missed.
Two reference refiners are provided: a deterministic harmonic in-painter
(the geometry oracle) and a toy conditional-diffusion refiner that runs
partial denoising with per-step re-imposition of trusted pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import factorized

from .diffusion import (
    Denoiser,
    GaussianMixtureModel,
    NoiseSchedule,
    forward_sample,
    sdedit_refine,
)
from .errors import (
    AllMissingError,
    DimensionMismatchError,
    InvalidParamsError,
    NoOverlapError,
)
from .rasters import ImageBuffer, SemanticMap
from .scene import SceneManifest
from .warp import (
    RefinerCondition,
    Strategy,
    blend_history,
    compose_condition,
    flow_from_pointmaps,
    importance_from_depth,
    select_frames,
    softmax_splat,
)

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class Refiner(Protocol):
    def refine(self, condition: RefinerCondition,
               rng: np.random.Generator) -> ImageBuffer:
        ...


# --------------------------------------------------------------------------
# reference refiners
# --------------------------------------------------------------------------

class HarmonicFillRefiner:
    """Keep covered pixels, fill holes with the discrete Laplace equation.

    Hole components that touch no covered pixel (so the equation has no
    boundary data) are filled with the mean covered color.
    """

    def refine(self, condition: RefinerCondition,
               rng: np.random.Generator) -> ImageBuffer:
        mask = condition.mask
        if not mask.any():
            raise AllMissingError("warp mask is entirely false")
        out = condition.warped.astype(np.float64).copy()
        if mask.all():
            return ImageBuffer(out.astype(np.float32))

        holes = ~mask
        labels, n_comp = ndimage.label(holes, structure=_FOUR_CONN)
        touches = np.zeros(n_comp + 1, dtype=bool)
        for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rolled = np.roll(mask, shift, axis=(0, 1))
            # roll wraps around; kill the wrapped edge
            if shift[0] == 1:
                rolled[0, :] = False
            elif shift[0] == -1:
                rolled[-1, :] = False
            elif shift[1] == 1:
                rolled[:, 0] = False
            else:
                rolled[:, -1] = False
            hit = holes & rolled
            touches[np.unique(labels[hit])] = True
        touches[0] = False

        sea = holes & ~touches[labels]
        if sea.any():
            out[sea] = out[mask].mean(axis=0)

        unknown = holes & touches[labels]
        if unknown.any():
            out[unknown] = self._solve(unknown, mask, out)
        return ImageBuffer(np.clip(out, 0.0, 1.0).astype(np.float32))

    @staticmethod
    def _solve(unknown: np.ndarray, mask: np.ndarray,
               values: np.ndarray) -> np.ndarray:
        h, w = unknown.shape
        idx = -np.ones((h, w), dtype=np.int64)
        ur, uc = np.nonzero(unknown)
        n = ur.size
        idx[ur, uc] = np.arange(n)

        rows, cols, data = [], [], []
        rhs = np.zeros((n, values.shape[2]), dtype=np.float64)
        degree = np.zeros(n, dtype=np.float64)
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = ur + dr, uc + dc
            ingrid = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
            degree += ingrid
            nbr_unknown = ingrid & (idx[nr % h, nc % w] >= 0) & unknown[nr % h, nc % w]
            sel = np.nonzero(nbr_unknown)[0]
            rows.extend(sel.tolist())
            cols.extend(idx[nr[sel], nc[sel]].tolist())
            data.extend([-1.0] * sel.size)
            nbr_known = ingrid & mask[nr % h, nc % w]
            sel = np.nonzero(nbr_known)[0]
            rhs[sel] += values[nr[sel], nc[sel]]
        rows.extend(range(n))
        cols.extend(range(n))
        data.extend(degree.tolist())
        a = sparse.csc_matrix((data, (rows, cols)), shape=(n, n))
        solve = factorized(a)
        return np.column_stack([solve(rhs[:, c])
                                for c in range(values.shape[2])])


@dataclass(frozen=True)
class DepthModulatedCondition:
    """Adapter handing a per-pixel mixture-mean offset to a GmmDenoiser."""

    condition: RefinerCondition
    gain: float

    def mean_offset(self, shape) -> np.ndarray:
        off = self.gain * (self.condition.depth.astype(np.float64) - 0.5)
        return off[..., None]


@dataclass
class ToyDiffusionRefiner:
    """Partial-diffusion hole filler over per-pixel color states.

    Holes start at the mean covered color (neutral gray when nothing is
    covered), the whole frame is noised to round(strength * T) and
    denoised, and covered pixels are re-imposed after every reverse step
    (forward-noised copies while t >= 1, the clean warp at t = 0) so the
    trusted region cannot drift. Setting strength to 0 skips diffusion and
    returns the composite unchanged.
    """

    denoiser: Denoiser
    schedule: NoiseSchedule
    strength: float = 0.3
    reimpose: bool = True
    depth_gain: float = 0.0

    def refine(self, condition: RefinerCondition,
               rng: np.random.Generator) -> ImageBuffer:
        mask = condition.mask
        warped = condition.warped.astype(np.float64)
        fill = warped[mask].mean(axis=0) if mask.any() else np.full(3, 0.5)
        x = np.where(mask[..., None], warped, fill)
        if self.strength == 0.0:
            return ImageBuffer(x.astype(np.float32))

        cond = DepthModulatedCondition(condition, self.depth_gain)

        def post_step(state: np.ndarray, level: int) -> np.ndarray:
            if not self.reimpose or not mask.any():
                return state
            if level >= 1:
                ref = forward_sample(warped, level, self.schedule,
                                     rng.standard_normal(warped.shape))
            else:
                ref = warped
            return np.where(mask[..., None], ref, state)

        out = sdedit_refine(x, self.strength, self.denoiser, self.schedule,
                            rng, condition=cond, post_step=post_step)
        out = np.clip(out, 0.0, 1.0)
        if self.reimpose:
            out = np.where(mask[..., None], warped, out)
        return ImageBuffer(out.astype(np.float32))


def diffusion_fill_refiner() -> HarmonicFillRefiner:
    return HarmonicFillRefiner()


def toy_diffusion_refiner(denoiser: Denoiser, schedule: NoiseSchedule,
                          strength: float = 0.3, reimpose: bool = True,
                          depth_gain: float = 0.0) -> ToyDiffusionRefiner:
    return ToyDiffusionRefiner(denoiser, schedule, strength, reimpose, depth_gain)


def build_palette_gmm(image: ImageBuffer, seg: SemanticMap,
                      min_variance: float = 4e-4) -> GaussianMixtureModel:
    """Color mixture with one component per segmentation class present."""
    pixels = image.data.reshape(-1, image.channels).astype(np.float64)
    if image.channels == 1:
        pixels = np.repeat(pixels, 3, axis=1)
    ids = np.unique(seg.labels)
    flat = seg.labels.reshape(-1)
    weights, means, variances = [], [], []
    total = flat.size
    for label in ids:
        sel = pixels[flat == label]
        weights.append(sel.shape[0] / total)
        means.append(sel.mean(axis=0))
        variances.append(max(min_variance, float(sel.var(axis=0).mean())))
    return GaussianMixtureModel(np.array(weights), np.array(means),
                                np.array(variances))


# --------------------------------------------------------------------------
# the autoregressive loop
# --------------------------------------------------------------------------

@dataclass
class LiftConfig:
    strategy: Strategy = Strategy.LAST_PLUS_TWO_RANDOM
    gamma: float = 1.0
    sharpness: float = 10.0
    eps_cov: float = 1e-4
    direction: str = "forward"
    allow_gaps: bool = False
    z_min: float = 1e-6
    flow_margin: float = 0.0


@dataclass
class LiftResult:
    stylized: dict[int, ImageBuffer] = field(default_factory=dict)
    selections: dict[int, tuple[int, ...]] = field(default_factory=dict)
    coverage: dict[int, float] = field(default_factory=dict)
    masks: dict[int, np.ndarray] = field(default_factory=dict)

    def frames(self) -> list[tuple[int, ImageBuffer]]:
        return sorted(self.stylized.items())


def lift_sequence(scene: SceneManifest, stylized_seed: ImageBuffer,
                  seed_index: int, refiner: Refiner, config: LiftConfig,
                  rng: np.random.Generator) -> LiftResult:
    """Propagate one stylized frame through the rest of the scene.

    Frames are processed autoregressively away from the seed; "both"
    wanders forward first, then backward. Deterministic for a fixed rng
    seed and refiner.
    """
    n = len(scene.frames)
    if not 0 <= seed_index < n:
        raise InvalidParamsError(f"seed index {seed_index} outside 0..{n - 1}")
    if (stylized_seed.width, stylized_seed.height) != (scene.width, scene.height):
        raise DimensionMismatchError(
            f"seed is {stylized_seed.width}x{stylized_seed.height}, scene is "
            f"{scene.width}x{scene.height}")
    if config.direction not in ("forward", "backward", "both"):
        raise InvalidParamsError(
            f"direction must be forward/backward/both, got "
            f"'{config.direction}'")

    result = LiftResult()
    result.stylized[seed_index] = stylized_seed
    result.coverage[seed_index] = 1.0
    result.selections[seed_index] = ()
    result.masks[seed_index] = np.ones((scene.height, scene.width), dtype=bool)

    runs = []
    if config.direction in ("forward", "both"):
        runs.append(range(seed_index + 1, n))
    if config.direction in ("backward", "both"):
        runs.append(range(seed_index - 1, -1, -1))

    for order in runs:
        pos_to_frame = [seed_index]
        for target in order:
            p = len(pos_to_frame)
            sel = select_frames(p, list(range(p)), config.strategy, rng)
            frame_j = scene.frames[target]
            warps = []
            for q in sel.indices:
                k = pos_to_frame[q]
                flow = flow_from_pointmaps(scene.frames[k].pointmap,
                                           frame_j.pose, frame_j.intrinsics,
                                           config.z_min, config.flow_margin)
                importance = importance_from_depth(scene.frames[k].depth)
                warps.append((softmax_splat(result.stylized[k], flow,
                                            importance, config.eps_cov,
                                            config.sharpness), p - q))
            blended = blend_history(warps, config.gamma)
            if not blended.mask.any() and not config.allow_gaps:
                raise NoOverlapError(
                    f"frame {target}: no pixels covered from sources "
                    f"{[pos_to_frame[q] for q in sel.indices]}")
            condition = compose_condition(blended, frame_j.depth)
            out = refiner.refine(condition, rng)
            if (out.width, out.height) != (scene.width, scene.height):
                raise DimensionMismatchError(
                    f"refiner returned {out.width}x{out.height} for frame "
                    f"{target}")
            result.stylized[target] = out
            result.selections[target] = tuple(pos_to_frame[q]
                                              for q in sel.indices)
            result.coverage[target] = blended.coverage()
            result.masks[target] = blended.mask
            pos_to_frame.append(target)
    return result
