"""Raster rendering of token canvases, and exact inversion.

Glyph geometry is fixed and integer-deterministic so rendered bytes are
stable across platforms and so an independent reader can classify tiles.
Each token paints one tile_px x tile_px tile; with T = tile_px and margin
m = max(1, T // 8):

* square: pixels with m <= x < T-m and m <= y < T-m
* circle: pixels with (2x+1-T)^2 + (2y+1-T)^2 <= (T-2m)^2
* triangle: apex-up; at row m+j (j = 0 .. T-2m-1) the painted run is the
  centred span of width j+1, so the base is T-2m wide

Background tiles are pure white; unset tiles (partial canvases rendered in
full) are light grey.  Object colors are the fixed RGB table below.
"""
from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .canvas import CanvasSpec, TokenCanvas
from .errors import ShapeMismatch, UnknownToken, UnpopulatedCanvas
from .prompts import COLORS, SHAPES, object_types

RGB = {
    "red": (255, 0, 0),
    "green": (0, 160, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 200, 0),
}
WHITE = (255, 255, 255)
GREY = (200, 200, 200)


def _square_mask(T: int) -> np.ndarray:
    m = max(1, T // 8)
    mask = np.zeros((T, T), dtype=bool)
    mask[m : T - m, m : T - m] = True
    return mask


def _circle_mask(T: int) -> np.ndarray:
    m = max(1, T // 8)
    y, x = np.mgrid[0:T, 0:T]
    dx = 2 * x + 1 - T
    dy = 2 * y + 1 - T
    return dx * dx + dy * dy <= (T - 2 * m) ** 2


def _triangle_mask(T: int) -> np.ndarray:
    m = max(1, T // 8)
    H = T - 2 * m  # height equals base width, so runs widen one pixel per row
    mask = np.zeros((T, T), dtype=bool)
    for j in range(H):
        wj = j + 1
        lo = (T - wj) // 2
        mask[m + j, lo : lo + wj] = True
    return mask


_SHAPE_MASKS = {"square": _square_mask, "circle": _circle_mask, "triangle": _triangle_mask}


def _tile_table(spec: CanvasSpec) -> np.ndarray:
    """uint8[K+1, T, T, 3]: one rendered tile per token, last entry = unset."""
    T = spec.tile_px
    table = np.empty((spec.K + 1, T, T, 3), dtype=np.uint8)
    table[0] = np.array(WHITE, dtype=np.uint8)
    for tok, (color, shape) in enumerate(object_types(spec.K), start=1):
        tile = np.empty((T, T, 3), dtype=np.uint8)
        tile[:] = np.array(WHITE, dtype=np.uint8)
        tile[_SHAPE_MASKS[shape](T)] = np.array(RGB[color], dtype=np.uint8)
        table[tok] = tile
    table[spec.K] = np.array(GREY, dtype=np.uint8)
    return table


_TILE_CACHE: dict[CanvasSpec, np.ndarray] = {}


def _tiles(spec: CanvasSpec) -> np.ndarray:
    t = _TILE_CACHE.get(spec)
    if t is None:
        t = _tile_table(spec)
        _TILE_CACHE[spec] = t
    return t


def render_canvas(canvas: TokenCanvas, rows: int | None = None) -> np.ndarray:
    """Rasterize to uint8[rows*T, w*T, 3].

    rows=None renders the whole canvas, which must be complete; an explicit
    row count renders exactly that many rows, which must be fully populated.
    """
    spec = canvas.spec
    T = spec.tile_px
    if rows is None:
        rows = spec.h
    elif not 0 <= rows <= spec.h:
        raise ShapeMismatch(f"cannot render {rows} rows of a {spec.h}-row canvas")
    if canvas.filled < rows * spec.w:
        raise UnpopulatedCanvas(
            f"first {rows} rows need {rows * spec.w} tokens, canvas has {canvas.filled}"
        )
    tiles = _tiles(spec)
    img = np.empty((rows * T, spec.w * T, 3), dtype=np.uint8)
    for r in range(rows):
        for c in range(spec.w):
            pos = r * spec.w + c
            img[r * T : (r + 1) * T, c * T : (c + 1) * T] = tiles[int(canvas.tokens[pos])]
    return img


def tokens_from_image(img: np.ndarray, spec: CanvasSpec) -> np.ndarray:
    """Exact inverse of render_canvas for fully-rendered rows.

    Returns int32[rows * w]; raises UnknownToken for any tile that is not
    byte-identical to a rendered glyph (grey unset tiles included).
    """
    T = spec.tile_px
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] % T or img.shape[1] != spec.w * T:
        raise ShapeMismatch(
            f"image shape {getattr(img, 'shape', None)} does not tile a width-{spec.w} canvas at {T}px"
        )
    rows = img.shape[0] // T
    if rows > spec.h:
        raise ShapeMismatch(f"image has {rows} tile rows, canvas only {spec.h}")
    tiles = _tiles(spec)
    out = np.empty(rows * spec.w, dtype=np.int32)
    for r in range(rows):
        for c in range(spec.w):
            tile = img[r * T : (r + 1) * T, c * T : (c + 1) * T]
            for tok in range(spec.K):
                if np.array_equal(tile, tiles[tok]):
                    out[r * spec.w + c] = tok
                    break
            else:
                raise UnknownToken(f"tile at row {r}, col {c} matches no glyph")
    return out


def to_ppm(img: np.ndarray) -> bytes:
    """Binary PPM (P6, maxval 255)."""
    h, w = img.shape[0], img.shape[1]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def from_ppm(data: bytes) -> np.ndarray:
    """Parse binary PPM; whitespace/comment handling per the format."""
    fields: list[bytes] = []
    i = 0
    if not data.startswith(b"P6"):
        raise ShapeMismatch("not a binary PPM (missing P6 magic)")
    i = 2
    while len(fields) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ShapeMismatch("truncated PPM header")
        fields.append(data[i:j])
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ShapeMismatch(f"unsupported PPM maxval {maxval}")
    body = data[i : i + w * h * 3]
    if len(body) != w * h * 3:
        raise ShapeMismatch("PPM pixel data truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def to_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def from_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def encode_image(img: np.ndarray, image_format: str) -> bytes:
    if image_format == "png":
        return to_png(img)
    if image_format == "ppm":
        return to_ppm(img)
    raise ValueError(f"unknown image format {image_format!r}")


def decode_image(data: bytes, image_format: str) -> np.ndarray:
    if image_format == "png":
        return from_png(data)
    if image_format == "ppm":
        return from_ppm(data)
    raise ValueError(f"unknown image format {image_format!r}")
