"""Pixel-level substrate: images, PNG I/O, paired crops, flips and block MAE."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import DimensionMismatch, FormatError, IoError, SizeError
from .rng import Rng

MIN_SIDE = 256


@dataclass(eq=False)
class Image:
    """8-bit sRGB raster stored as a ``(height, width, 3)`` uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.uint8:
            raise FormatError(f"image data must be uint8, got {data.dtype}")
        if data.ndim != 3 or data.shape[2] != 3:
            raise FormatError(f"image data must have shape (H, W, 3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise SizeError("image must be at least 1x1")
        self.data = np.ascontiguousarray(data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 3

    def to_float(self) -> np.ndarray:
        """Float64 view with samples in [0, 1]."""
        return self.data.astype(np.float64) / 255.0

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


@dataclass(eq=False)
class Patch(Image):
    """Crop of a larger image; ``origin`` is the (x, y) offset of its top-left pixel."""

    origin: tuple[int, int] = field(default=(0, 0))


def load_png(path) -> Image:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            pil = PILImage.open(fh)
            pil.load()
    except FileNotFoundError as exc:
        raise IoError(f"no such file: {path}") from exc
    except UnidentifiedImageError as exc:
        raise FormatError(f"not a PNG file: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if pil.format != "PNG":
        raise FormatError(f"not a PNG file: {path} ({pil.format})")
    mode = pil.mode
    if mode == "RGB":
        rgb = pil
    elif mode in ("RGBA", "P", "PA"):
        rgb = pil.convert("RGB")
    elif mode in ("L", "LA"):
        rgb = pil.convert("L").convert("RGB")
    else:
        # 16-bit, 1-bit and float modes
        raise FormatError(f"unsupported PNG mode {mode!r} in {path}")
    return Image(np.array(rgb, dtype=np.uint8))


def save_png(img: Image, path) -> None:
    path = os.fspath(path)
    try:
        PILImage.fromarray(img.data).save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def pad_to_min(img: Image, min_side: int = MIN_SIDE) -> Image:
    """Reflect-pad an image so that each side is at least ``min_side``."""
    ph = max(0, min_side - img.height)
    pw = max(0, min_side - img.width)
    if ph == 0 and pw == 0:
        return img
    data = img.data
    # numpy reflect cannot exceed side-1 per pass; 1-pixel sides are simply replicated
    mode = "reflect" if min(img.height, img.width) > 1 else "edge"
    data = np.pad(data, ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)), mode=mode)
    return Image(data)


def crop(img: Image, x: int, y: int, w: int, h: int) -> Patch:
    return Patch(img.data[y : y + h, x : x + w].copy(), origin=(x, y))


def random_crop_pair(dist: Image, ref: Image, wp: int, hp: int, rng: Rng, multiple: int = 64) -> tuple[Patch, Patch]:
    """Crop ``dist`` and ``ref`` at one shared, uniformly drawn origin.

    ``wp`` and ``hp`` must be multiples of ``multiple`` (the grid count).
    """
    if dist.data.shape != ref.data.shape:
        raise DimensionMismatch(
            f"distorted {dist.width}x{dist.height} vs reference {ref.width}x{ref.height}"
        )
    if wp <= 0 or hp <= 0 or wp % multiple or hp % multiple:
        raise SizeError(f"crop size {wp}x{hp} must be positive multiples of {multiple}")
    if wp > dist.width or hp > dist.height:
        raise SizeError(f"crop {wp}x{hp} exceeds image {dist.width}x{dist.height}")
    x = rng.randint(0, dist.width - wp)
    y = rng.randint(0, dist.height - hp)
    return crop(dist, x, y, wp, hp), crop(ref, x, y, wp, hp)


def flip(img: Image, axis: str) -> Image:
    """Mirror an image; ``axis`` is ``"horizontal"`` (left-right) or ``"vertical"``."""
    if axis == "horizontal":
        return Image(img.data[:, ::-1])
    if axis == "vertical":
        return Image(img.data[::-1])
    raise ValueError(f"unknown flip axis {axis!r}")


def block_mae(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference of two equally shaped [0, 1] float blocks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"block shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def save_mask_png(bits: np.ndarray, path) -> None:
    """Write a binary mask as 8-bit grayscale with values {0, 255}."""
    path = os.fspath(path)
    arr = np.where(np.asarray(bits, dtype=bool), 255, 0).astype(np.uint8)
    try:
        PILImage.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
