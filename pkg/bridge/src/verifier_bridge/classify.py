"""Reading rendered scene grids back into object labels.

The grid renderer's glyph geometry is documented and integer-deterministic:
with tile size T and margin m = max(1, T // 8), a square fills
[m, T-m) x [m, T-m), a circle covers pixels with
(2x+1-T)^2 + (2y+1-T)^2 <= (T-2m)^2, and a triangle is apex-up with a run
of width j+1 centred on row m+j.  Tiles are therefore classified by exact
comparison against locally reconstructed reference tiles; the images travel
losslessly (PNG or binary PPM), so equality is the honest test.
"""
from __future__ import annotations

import io

import numpy as np
from PIL import Image

COLORS = {
    "red": (255, 0, 0),
    "green": (0, 160, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 200, 0),
}
SHAPES = ("square", "circle", "triangle")
WHITE = (255, 255, 255)

Label = tuple[str, str] | None  # (color, shape), or None for background


def _square_mask(T: int) -> np.ndarray:
    m = max(1, T // 8)
    mask = np.zeros((T, T), dtype=bool)
    mask[m: T - m, m: T - m] = True
    return mask


def _circle_mask(T: int) -> np.ndarray:
    m = max(1, T // 8)
    y, x = np.mgrid[0:T, 0:T]
    dx = 2 * x + 1 - T
    dy = 2 * y + 1 - T
    return dx * dx + dy * dy <= (T - 2 * m) ** 2


def _triangle_mask(T: int) -> np.ndarray:
    m = max(1, T // 8)
    mask = np.zeros((T, T), dtype=bool)
    for j in range(T - 2 * m):
        wj = j + 1
        lo = (T - wj) // 2
        mask[m + j, lo: lo + wj] = True
    return mask


_MASKS = {"square": _square_mask, "circle": _circle_mask, "triangle": _triangle_mask}

_REFERENCE_CACHE: dict[int, list[tuple[Label, bytes]]] = {}


def reference_tiles(T: int) -> list[tuple[Label, bytes]]:
    """(label, tile bytes) for background plus every color x shape glyph."""
    cached = _REFERENCE_CACHE.get(T)
    if cached is not None:
        return cached
    out: list[tuple[Label, bytes]] = []
    blank = np.full((T, T, 3), 255, dtype=np.uint8)
    out.append((None, blank.tobytes()))
    for color, rgb in COLORS.items():
        for shape in SHAPES:
            tile = blank.copy()
            tile[_MASKS[shape](T)] = np.array(rgb, dtype=np.uint8)
            out.append(((color, shape), tile.tobytes()))
    # below 6px the inscribed circle covers the whole square glyph
    if len({raw for _, raw in out}) != len(out):
        raise ValueError(
            f"tile size {T} cannot distinguish every glyph; use 6px or larger"
        )
    _REFERENCE_CACHE[T] = out
    return out


def _parse_ppm(data: bytes) -> np.ndarray:
    """Binary P6 decoder, 8-bit maxval; comments and loose whitespace allowed."""
    pos = 0
    tokens: list[bytes] = []
    while len(tokens) < 4:
        if pos >= len(data):
            raise ValueError("truncated ppm header")
        ch = data[pos: pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos: pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos: pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"not a binary ppm (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ValueError(f"unsupported ppm maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos: pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise ValueError("ppm raster shorter than its header promises")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)


def decode_image(data: bytes, image_format: str) -> np.ndarray:
    """Raw image bytes to uint8[h, w, 3]."""
    if image_format == "ppm":
        return _parse_ppm(data)
    if image_format == "png":
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    raise ValueError(f"unsupported image format {image_format!r}")


def read_grid(pixels: np.ndarray, tile_px: int) -> list[list[Label]]:
    """Classify every tile; returns labels[tile_row][tile_col].

    Raises ValueError when the image is not a whole number of tiles or a
    tile matches no reference glyph.
    """
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected an RGB pixel array, got shape {pixels.shape}")
    h_px, w_px = pixels.shape[:2]
    if h_px % tile_px or w_px % tile_px or not h_px or not w_px:
        raise ValueError(
            f"{h_px}x{w_px} image is not a whole grid of {tile_px}px tiles"
        )
    refs = reference_tiles(tile_px)
    labels: list[list[Label]] = []
    for r in range(h_px // tile_px):
        row: list[Label] = []
        for c in range(w_px // tile_px):
            tile = pixels[r * tile_px: (r + 1) * tile_px,
                          c * tile_px: (c + 1) * tile_px]
            blob = np.ascontiguousarray(tile).tobytes()
            for label, ref in refs:
                if blob == ref:
                    row.append(label)
                    break
            else:
                raise ValueError(f"tile ({r}, {c}) matches no known glyph")
        labels.append(row)
    return labels
