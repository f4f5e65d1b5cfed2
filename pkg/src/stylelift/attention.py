"""Scaled dot-product attention with semantic masking, plus a desk-scale
appearance-transfer demonstrator built from patch color statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, EmptyRowError, InvalidParamsError
from .rasters import ImageBuffer, SemanticMap
from .segmatch import AttentionMask, ClassMatch, build_attention_mask, downsample_map

MASK_SUPPORT = "support"
MASK_LITERAL = "literal"


@dataclass(frozen=True)
class ProjectionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self) -> None:
        for name in ("w_q", "w_k", "w_v"):
            mat = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, mat)
            if mat.ndim != 2:
                raise DimensionMismatchError(f"{name} must be a matrix")
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} contains non-finite entries")


def project_qkv(features: np.ndarray, weights: ProjectionWeights
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project token features to (Q, K, V) = (F W_q, F W_k, F W_v)."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise DimensionMismatchError("features must be tokens x dim")
    for name, mat in (("w_q", weights.w_q), ("w_k", weights.w_k),
                      ("w_v", weights.w_v)):
        if mat.shape[0] != feats.shape[1]:
            raise DimensionMismatchError(
                f"{name} is {mat.shape}, features have dim {feats.shape[1]}")
    return feats @ weights.w_q, feats @ weights.w_k, feats @ weights.w_v


def _as_bits(mask: AttentionMask | np.ndarray | None,
             rows: int, cols: int) -> np.ndarray:
    if mask is None:
        return np.ones((rows, cols), dtype=bool)
    bits = mask.bits if isinstance(mask, AttentionMask) else np.asarray(mask, bool)
    if bits.shape != (rows, cols):
        raise DimensionMismatchError(
            f"mask is {bits.shape}, attention needs {(rows, cols)}")
    return bits


def attention_scores(q: np.ndarray, k: np.ndarray,
                     mask: AttentionMask | np.ndarray | None = None,
                     mask_mode: str = MASK_SUPPORT) -> np.ndarray:
    """Post-softmax attention weights, one row per query token.

    mask_mode selects how the binary mask enters the softmax:

    * ``support``: masked-out logits are removed from the softmax support
      (set to -inf), so their weights are exactly zero.
    * ``literal``: logits are multiplied by the mask before the softmax,
      so masked-out entries keep weight exp(0) and compete with the rest.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise DimensionMismatchError(
            f"query {q.shape} and key {k.shape} dims disagree")
    if mask_mode not in (MASK_SUPPORT, MASK_LITERAL):
        raise InvalidParamsError(f"unknown mask mode '{mask_mode}'")
    bits = _as_bits(mask, q.shape[0], k.shape[0])
    if not bits.any(axis=1).all():
        row = int(np.flatnonzero(~bits.any(axis=1))[0])
        raise EmptyRowError(f"mask row {row} has no support")

    logits = (q @ k.T) / np.sqrt(q.shape[1])
    if mask_mode == MASK_LITERAL:
        logits = logits * bits
        shifted = logits - logits.max(axis=1, keepdims=True)
        weights = np.exp(shifted)
    else:
        logits = np.where(bits, logits, -np.inf)
        shifted = logits - logits.max(axis=1, keepdims=True)
        weights = np.where(bits, np.exp(shifted), 0.0)
    return weights / weights.sum(axis=1, keepdims=True)


def masked_cross_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                           mask: AttentionMask | np.ndarray | None = None,
                           mask_mode: str = MASK_SUPPORT) -> np.ndarray:
    """Attend queries over (key, value) pairs restricted by the mask."""
    v = np.asarray(v, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != k.shape[0]:
        raise DimensionMismatchError(
            f"values {v.shape} must pair with keys {k.shape}")
    return attention_scores(q, k, mask, mask_mode) @ v


# --------------------------------------------------------------------------
# desk-scale appearance transfer on patch statistics
# --------------------------------------------------------------------------

def _patch_means(data: np.ndarray, patch: int) -> np.ndarray:
    h, w, c = data.shape
    grid = data.reshape(h // patch, patch, w // patch, patch, c)
    return grid.mean(axis=(1, 3)).reshape(-1, c)


def toy_semantic_transfer(src: ImageBuffer, style: ImageBuffer,
                          src_map: SemanticMap, style_map: SemanticMap,
                          match: ClassMatch, patch: int = 8,
                          temperature: float = 1.0,
                          mask_mode: str = MASK_SUPPORT) -> ImageBuffer:
    """Recolor source patches toward attention-weighted style patch means.

    Tokens are non-overlapping patches; each token's feature is its mean
    color. The semantic mask is built at the token grid, queries are the
    source means divided by ``temperature``, and every output patch keeps
    its within-patch residual while its mean moves to the attended style
    mean. Token grids must be square (width/patch == height/patch).
    """
    if temperature <= 0.0:
        raise InvalidParamsError("temperature must be positive")
    if patch < 1:
        raise InvalidParamsError("patch size must be >= 1")
    for name, img, seg in (("source", src, src_map), ("style", style, style_map)):
        if (img.width, img.height) != (seg.width, seg.height):
            raise DimensionMismatchError(
                f"{name} image {img.width}x{img.height} vs map "
                f"{seg.width}x{seg.height}")
        if img.width % patch or img.height % patch:
            raise DimensionMismatchError(
                f"patch {patch} must divide the {name} image "
                f"{img.width}x{img.height}")
        if img.width // patch != img.height // patch:
            raise DimensionMismatchError(
                f"{name} token grid must be square, got "
                f"{img.height // patch}x{img.width // patch}")
    d = src.width // patch
    if style.width // patch != d:
        raise DimensionMismatchError(
            f"token grids disagree: {d} vs {style.width // patch}")

    src_feats = _patch_means(src.data.astype(np.float64), patch)
    style_feats = _patch_means(style.data.astype(np.float64), patch)
    mask = build_attention_mask(downsample_map(src_map, d),
                                downsample_map(style_map, d), match)
    transferred = masked_cross_attention(src_feats / temperature, style_feats,
                                         style_feats, mask, mask_mode)

    h, w, c = src.data.shape
    out = src.data.astype(np.float64).reshape(d, patch, d, patch, c)
    shift = (transferred - src_feats).reshape(d, d, c)
    out = out + shift[:, None, :, None, :]
    out = np.clip(out.reshape(h, w, c), 0.0, 1.0)
    return ImageBuffer(out.astype(np.float32))
