"""Token canvas geometry.

A canvas is an h-by-w grid of codebook tokens laid out in raster order
(index = row * w + col).  Row bands partition the canvas into horizontal
segments; staged generation treats each band as one candidate's visible
prefix, so the geometry here is deliberately dumb and exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndivisibleCanvas, OutOfRange, ShapeMismatch, UnknownToken

UNSET = -1  # sentinel for unpopulated cells


@dataclass(frozen=True)
class CanvasSpec:
    """Geometry and codebook size of one canvas."""

    h: int
    w: int
    K: int
    tile_px: int = 16

    def __post_init__(self) -> None:
        if self.h < 1 or self.w < 1:
            raise ShapeMismatch(f"canvas must be at least 1x1, got {self.h}x{self.w}")
        if self.K < 2:
            raise ShapeMismatch(f"codebook needs background plus one token, got K={self.K}")
        if self.tile_px < 1:
            raise ShapeMismatch(f"tile_px must be positive, got {self.tile_px}")

    @property
    def n_tokens(self) -> int:
        return self.h * self.w

    def row_of(self, position: int) -> int:
        if not 0 <= position < self.n_tokens:
            raise OutOfRange(f"position {position} outside canvas of {self.n_tokens} tokens")
        return position // self.w


@dataclass(frozen=True)
class SegmentSlice:
    """One horizontal band of a canvas."""

    band_index: int
    row_start: int
    row_end: int
    token_count: int


@dataclass
class TokenCanvas:
    """A (possibly partially) populated canvas.

    ``filled`` is the populated prefix length; tokens past it hold UNSET.
    """

    spec: CanvasSpec
    tokens: np.ndarray = field(default=None)  # type: ignore[assignment]
    filled: int = 0

    def __post_init__(self) -> None:
        if self.tokens is None:
            self.tokens = np.full(self.spec.n_tokens, UNSET, dtype=np.int32)
        else:
            self.tokens = np.asarray(self.tokens, dtype=np.int32)
            if self.tokens.shape != (self.spec.n_tokens,):
                raise ShapeMismatch(
                    f"token buffer of {self.tokens.shape} does not fit "
                    f"{self.spec.h}x{self.spec.w} canvas"
                )
        head = self.tokens[: self.filled]
        if head.size and (head.min() < 0 or head.max() >= self.spec.K):
            raise UnknownToken(f"populated tokens must lie in [0, {self.spec.K})")

    @property
    def complete(self) -> bool:
        return self.filled == self.spec.n_tokens

    def copy(self) -> "TokenCanvas":
        return TokenCanvas(self.spec, self.tokens.copy(), self.filled)


def partition_rows(spec: CanvasSpec, bands: int) -> list[SegmentSlice]:
    """Split the canvas into ``bands`` equal-height row bands."""
    if bands < 1:
        raise IndivisibleCanvas(f"band count must be positive, got {bands}")
    if spec.h % bands != 0:
        raise IndivisibleCanvas(f"height {spec.h} not divisible into {bands} bands")
    rows_per = spec.h // bands
    return [
        SegmentSlice(
            band_index=i,
            row_start=i * rows_per,
            row_end=(i + 1) * rows_per,
            token_count=rows_per * spec.w,
        )
        for i in range(bands)
    ]


def band_of(spec: CanvasSpec, position: int, bands: int) -> int:
    """Band index containing a raster position."""
    if bands < 1 or spec.h % bands != 0:
        raise IndivisibleCanvas(f"height {spec.h} not divisible into {bands} bands")
    row = spec.row_of(position)  # raises OutOfRange
    return row // (spec.h // bands)


def compose_grid(segments: list[np.ndarray], spec: CanvasSpec) -> TokenCanvas:
    """Stack equal-length segments into one fully populated canvas.

    Segment i becomes band i; together they must tile spec exactly.
    """
    bands = len(segments)
    if bands == 0:
        raise ShapeMismatch("cannot compose an empty segment list")
    if spec.h % bands != 0:
        raise ShapeMismatch(f"{bands} segments cannot tile a {spec.h}x{spec.w} canvas")
    expect = (spec.h // bands) * spec.w
    buf = np.empty(spec.n_tokens, dtype=np.int32)
    for i, seg in enumerate(segments):
        arr = np.asarray(seg, dtype=np.int32)
        if arr.shape != (expect,):
            raise ShapeMismatch(
                f"segment {i} has {arr.shape[0] if arr.ndim == 1 else arr.shape} tokens, "
                f"band needs {expect}"
            )
        buf[i * expect : (i + 1) * expect] = arr
    return TokenCanvas(spec, buf, filled=spec.n_tokens)


def extract_band(canvas: TokenCanvas, band_index: int, bands: int) -> np.ndarray:
    """Copy of one band's tokens; the inverse of compose_grid."""
    slices = partition_rows(canvas.spec, bands)
    if not 0 <= band_index < bands:
        raise OutOfRange(f"band {band_index} outside [0, {bands})")
    s = slices[band_index]
    lo = s.row_start * canvas.spec.w
    return canvas.tokens[lo : lo + s.token_count].copy()
