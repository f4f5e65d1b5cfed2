"""Class matching between segmentations and token-level attention masks.

The mask construction works at a coarse token grid (d tokens per side).
Categorical rasters cannot be bilinearly resized directly, so each class
is downsampled as a one-hot indicator plane and every output cell takes
the argmax, with ties resolved toward the lower label id.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    ConflictingOverrideError,
    DimensionMismatchError,
    EmptyRowWithKeepSourceError,
    InvalidParamsError,
    UnknownClassError,
)
from .rasters import SemanticMap


class UnmatchedPolicy(Enum):
    """What a source token without a matched style class may attend to."""

    GLOBAL_ATTEND = "global"
    KEEP_SOURCE = "keep"


@dataclass(frozen=True)
class ClassMatch:
    pairs: frozenset[tuple[str, str]]
    policy_unmatched: UnmatchedPolicy = UnmatchedPolicy.GLOBAL_ATTEND

    def __post_init__(self) -> None:
        sources = [s for s, _ in self.pairs]
        if len(sources) != len(set(sources)):
            raise ConflictingOverrideError(
                "a source class is mapped to more than one style class")

    def style_for(self, source_class: str) -> str | None:
        for s, t in self.pairs:
            if s == source_class:
                return t
        return None


@dataclass
class AttentionMask:
    """d^2 x d^2 boolean matrix; rows are source tokens, columns style tokens."""

    d: int
    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool)
        n = self.d * self.d
        if self.bits.shape != (n, n):
            raise DimensionMismatchError(
                f"mask must be {n}x{n} for d={self.d}, got {self.bits.shape}")
        if not self.bits.any(axis=1).all():
            raise ValueError("attention mask has an all-false row")


def match_classes(src: SemanticMap, style: SemanticMap,
                  overrides: list[tuple[str, str]] | None = None,
                  policy: UnmatchedPolicy = UnmatchedPolicy.GLOBAL_ATTEND
                  ) -> ClassMatch:
    """Pair classes by exact name equality, then apply explicit overrides.

    Overrides replace the default pairing for their source class. A source
    class absent from the source map, or a style class absent from the
    style map, makes an override invalid.
    """
    src_classes = src.classes()
    style_classes = style.classes()
    pairs = {(c, c) for c in src_classes & style_classes}
    seen: set[str] = set()
    for source_class, style_class in overrides or []:
        if source_class in seen:
            raise ConflictingOverrideError(
                f"source class '{source_class}' overridden twice")
        seen.add(source_class)
        if source_class not in src_classes:
            raise UnknownClassError(
                f"override names unknown source class '{source_class}'")
        if style_class not in style_classes:
            raise UnknownClassError(
                f"override names unknown style class '{style_class}'")
        pairs = {(s, t) for s, t in pairs if s != source_class}
        pairs.add((source_class, style_class))
    return ClassMatch(frozenset(pairs), policy)


def downsample_map(semmap: SemanticMap, d: int) -> SemanticMap:
    """Reduce a label raster to d x d tokens via one-hot bilinear argmax."""
    if d < 1:
        raise InvalidParamsError("token grid size must be >= 1")
    h, w = semmap.height, semmap.width
    if d > min(w, h):
        raise InvalidParamsError(
            f"token grid {d} exceeds raster min dimension {min(w, h)}")

    ids = np.unique(semmap.labels)
    # output cell centers back-projected into input pixel coordinates
    ys = (np.arange(d) + 0.5) * (h / d) - 0.5
    xs = (np.arange(d) + 0.5) * (w / d) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    scores = np.empty((len(ids), d, d))
    for n, label in enumerate(ids):
        plane = (semmap.labels == label).astype(np.float64)
        scores[n] = (plane[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
                     + plane[np.ix_(y0, x1)] * (1 - fy) * fx
                     + plane[np.ix_(y1, x0)] * fy * (1 - fx)
                     + plane[np.ix_(y1, x1)] * fy * fx)

    # stable argmax: ids are sorted ascending, argmax takes the first max
    winner = np.argmax(scores, axis=0)
    out = ids[winner].astype(np.uint16)
    return SemanticMap(out, dict(semmap.label_table))


def build_attention_mask(src_d: SemanticMap, style_d: SemanticMap,
                         match: ClassMatch) -> AttentionMask:
    """Token-pair mask: true where the source token's matched style class
    equals the style token's class.

    Any row left without support (unmatched source class, or a matched
    style class that never occurs among the style tokens) becomes all-true
    under GLOBAL_ATTEND and is an error under KEEP_SOURCE.
    """
    if src_d.width != src_d.height or style_d.width != style_d.height:
        raise DimensionMismatchError("token maps must be square")
    if src_d.width != style_d.width:
        raise DimensionMismatchError(
            f"token maps disagree: {src_d.width} vs {style_d.width}")
    d = src_d.width

    src_classes = np.array([src_d.label_table[int(i)]
                            for i in src_d.labels.reshape(-1)])
    style_classes = np.array([style_d.label_table[int(i)]
                              for i in style_d.labels.reshape(-1)])
    wanted = np.array([match.style_for(c) or "" for c in src_classes])
    bits = wanted[:, None] == style_classes[None, :]

    empty = ~bits.any(axis=1)
    if empty.any():
        if match.policy_unmatched is UnmatchedPolicy.KEEP_SOURCE:
            row = int(np.flatnonzero(empty)[0])
            raise EmptyRowWithKeepSourceError(
                f"token row {row} (class '{src_classes[row]}') has no style "
                f"support under keep-source policy")
        bits[empty, :] = True
    return AttentionMask(d, bits)
