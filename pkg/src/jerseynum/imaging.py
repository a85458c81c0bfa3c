"""Owned 8-bit RGB raster type plus the geometric primitives everything else uses.

Pixels are stored as an immutable ``(height, width, 3)`` uint8 array. All
resampling in this package (resize and the warp kernels in
:mod:`jerseynum.augment`) goes through :func:`sample_bilinear`, which fixes one
convention once: half-pixel-center alignment, edge clamping, float math,
round-to-nearest on output. PNG is the only file format; decoding and encoding
are delegated to Pillow, everything geometric is done here in numpy.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError


class DecodeError(Exception):
    """File is not a PNG we can decode to 8-bit RGB."""


class OutOfBoundsError(Exception):
    """Paste rectangle does not fit inside the destination image."""


class HeightMismatchError(Exception):
    """Horizontal concatenation requires equal heights."""


@dataclass(frozen=True)
class Color:
    """8-bit RGB triple."""

    r: int
    g: int
    b: int

    def __post_init__(self):
        for name in ("r", "g", "b"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and 0 <= v <= 255):
                raise ValueError(f"channel {name}={v!r} outside [0, 255]")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.uint8)


class Image:
    """Immutable 8-bit RGB image.

    Wraps a read-only ``(h, w, 3)`` uint8 array. Zero-sized images are legal
    in memory (they arise as concatenation identities); PNG I/O requires at
    least one pixel.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
        arr = np.ascontiguousarray(arr).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Image is immutable")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        """(width, height)"""
        return self.pixels.shape[1], self.pixels.shape[0]

    @classmethod
    def new(cls, width: int, height: int, color: Color = Color(0, 0, 0)) -> "Image":
        """Solid-color canvas."""
        if width < 0 or height < 0:
            raise ValueError("negative dimensions")
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:] = color.as_array()
        return cls(arr)

    def to_float(self) -> np.ndarray:
        """Writable float64 copy, values still on the [0, 255] scale."""
        return self.pixels.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


def from_float(arr: np.ndarray) -> Image:
    """Round float channel values to nearest (ties to even) and clamp to [0, 255]."""
    return Image(np.clip(np.rint(arr), 0, 255).astype(np.uint8))


_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def load_png(path: str | os.PathLike, allow_16bit: bool = False) -> Image:
    """Decode an 8-bit PNG to an :class:`Image`.

    Grayscale and paletted files are expanded to RGB; alpha is composited
    over black. 16-bit files raise :class:`DecodeError` unless ``allow_16bit``
    is set, in which case they are down-converted (high byte kept).
    """
    path = Path(path)
    # Bit depth lives in IHDR; Pillow hides it for 16-bit RGB, so peek at the
    # raw header before handing the file over.
    with open(path, "rb") as fh:
        header = fh.read(26)
    if len(header) < 26 or header[:8] != _PNG_MAGIC or header[12:16] != b"IHDR":
        raise DecodeError(f"{path}: not a PNG file")
    if header[24] == 16 and not allow_16bit:
        raise DecodeError(
            f"{path}: 16-bit PNG; pass allow_16bit=True for lossy 8-bit conversion"
        )
    try:
        with PILImage.open(path) as im:
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
                gray = (np.asarray(im, dtype=np.uint32) >> 8).astype(np.uint8)
                return Image(np.stack([gray] * 3, axis=-1))
            if im.mode in ("RGBA", "LA", "PA", "P"):
                rgba = np.asarray(im.convert("RGBA"), dtype=np.float64)
                rgb = rgba[..., :3] * (rgba[..., 3:4] / 255.0)
                return from_float(rgb)
            return Image(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except UnidentifiedImageError as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    except SyntaxError as exc:  # Pillow signals truncated PNG streams this way
        raise DecodeError(f"{path}: corrupt PNG ({exc})") from exc


def save_png(img: Image, path: str | os.PathLike) -> None:
    """Write ``img`` as an 8-bit RGB PNG. Raises OSError on unwritable paths."""
    if img.width < 1 or img.height < 1:
        raise ValueError("cannot encode an empty image")
    PILImage.fromarray(img.pixels, mode="RGB").save(Path(path), format="PNG")


def sample_bilinear(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinearly sample ``arr`` (h, w, 3 float) at fractional pixel coords.

    Coordinates index pixel centers; anything outside the grid clamps to the
    nearest edge pixel, so constant images stay constant and warps get edge
    replication for free. Returns float array of shape ``xs.shape + (3,)``.
    """
    h, w = arr.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bot = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(img: Image, width: int, height: int) -> Image:
    """Resize with half-pixel-center bilinear interpolation.

    Output pixel (i, j) samples the source at
    ``((j + 0.5) * w_src / width - 0.5, (i + 0.5) * h_src / height - 0.5)``.
    Same-size resize is pixel-exact.
    """
    if width < 1 or height < 1:
        raise ValueError("target dimensions must be >= 1")
    if (width, height) == (img.width, img.height):
        return img
    xs = (np.arange(width, dtype=np.float64) + 0.5) * (img.width / width) - 0.5
    ys = (np.arange(height, dtype=np.float64) + 0.5) * (img.height / height) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return from_float(sample_bilinear(img.to_float(), gx, gy))


def paste(dst: Image, src: Image, x: int, y: int) -> Image:
    """Return ``dst`` with ``src`` opaquely overwriting the rectangle at (x, y).

    The source must fit entirely inside the destination.
    """
    if x < 0 or y < 0 or x + src.width > dst.width or y + src.height > dst.height:
        raise OutOfBoundsError(
            f"{src.width}x{src.height} patch at ({x}, {y}) exceeds "
            f"{dst.width}x{dst.height} destination"
        )
    out = dst.pixels.copy()
    out[y : y + src.height, x : x + src.width] = src.pixels
    return Image(out)


def concat_horizontal(left: Image, right: Image) -> Image:
    if left.height != right.height:
        raise HeightMismatchError(f"heights differ: {left.height} vs {right.height}")
    return Image(np.concatenate([left.pixels, right.pixels], axis=1))
