"""Mask generation: pick strongly distorted cells and swap in reference content.

The per-cell difference map lives on the fine AGCS lattice (64x64 by
default).  It is averaged over 2x2 blocks onto the coarse lattice, where the
top half of values form ``MaskA``.  Inside each selected coarse cell exactly
two of the four fine cells are replaced by the reference (``MaskB``), so half
of every selected region keeps its distortion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agcs import SampledGrid
from .errors import DimensionMismatch, RangeError
from .imaging import Image
from .rng import Rng

# the 6 ways to pick 2 of the 4 fine cells in a 2x2 block, flat index r*2+c
PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@dataclass(eq=False)
class MaskA:
    bits: np.ndarray  # bool, coarse lattice
    mid: float = float("nan")

    def __eq__(self, other):
        return isinstance(other, MaskA) and np.array_equal(self.bits, other.bits)


@dataclass(eq=False)
class MaskB:
    bits: np.ndarray  # bool, fine lattice

    def __eq__(self, other):
        return isinstance(other, MaskB) and np.array_equal(self.bits, other.bits)


@dataclass(eq=False)
class MaskedImage:
    image: Image
    mask_a: MaskA
    mask_b: MaskB
    mode: str = "diff"
    ratio: float | None = None


def compute_diff(gdst: SampledGrid, gref: SampledGrid) -> np.ndarray:
    """Per-cell mean absolute error on [0, 1] samples; shape ``(gh, gw)``."""
    if gdst.cells.shape != gref.cells.shape:
        raise DimensionMismatch(f"grid shapes differ: {gdst.cells.shape} vs {gref.cells.shape}")
    d = np.abs(gdst.cells.astype(np.float64) - gref.cells.astype(np.float64)) / 255.0
    return d.mean(axis=(2, 3, 4))


def coarsen_diff(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    h, w = d.shape
    if h % 2 or w % 2:
        raise DimensionMismatch(f"difference map {h}x{w} has an odd side")
    return d.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def threshold_median(coarse: np.ndarray) -> MaskA:
    """Select exactly the top half of values; ties go to the lower row-major index."""
    coarse = np.asarray(coarse, dtype=np.float64)
    flat = coarse.ravel()
    n = flat.size
    k = n // 2
    order = np.argsort(-flat, kind="stable")
    bits = np.zeros(n, dtype=bool)
    bits[order[:k]] = True
    asc = np.sort(flat)
    mid = float((asc[n - k - 1] + asc[n - k]) / 2) if n >= 2 else float(flat[0])
    return MaskA(bits.reshape(coarse.shape), mid)


def upsample(bits: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x upsampling of a coarse mask."""
    return np.repeat(np.repeat(bits, 2, axis=0), 2, axis=1)


def draw_mask_b(a: MaskA, rng: Rng) -> MaskB:
    ch, cw = a.bits.shape
    blocks = np.zeros((ch, cw, 4), dtype=bool)
    for r, c in zip(*np.nonzero(a.bits)):
        p, q = PAIRS[rng.randbelow(6)]
        blocks[r, c, p] = blocks[r, c, q] = True
    fine = blocks.reshape(ch, cw, 2, 2).transpose(0, 2, 1, 3).reshape(ch * 2, cw * 2)
    return MaskB(fine)


def merge(gdst: SampledGrid, gref: SampledGrid, b: MaskB) -> SampledGrid:
    if gdst.cells.shape != gref.cells.shape:
        raise DimensionMismatch(f"grid shapes differ: {gdst.cells.shape} vs {gref.cells.shape}")
    if b.bits.shape != gdst.grid_shape:
        raise DimensionMismatch(f"mask {b.bits.shape} does not match grid lattice {gdst.grid_shape}")
    sel = b.bits[:, :, None, None, None]
    return SampledGrid(np.where(sel, gref.cells, gdst.cells))


def merge_and_splice(gdst: SampledGrid, gref: SampledGrid, b: MaskB, a: MaskA | None = None) -> MaskedImage:
    """Replace cells where ``b`` is set by reference cells and reassemble the image."""
    if a is None:
        a = coarse_or(b.bits)
    return MaskedImage(merge(gdst, gref, b).assemble(), a, b)


def coarse_or(fine: np.ndarray) -> MaskA:
    h, w = fine.shape
    return MaskA(fine.reshape(h // 2, 2, w // 2, 2).any(axis=(1, 3)))


def diff_mask(gdst: SampledGrid, gref: SampledGrid, rng: Rng) -> MaskedImage:
    """Full difference-driven masking of a sampled pair."""
    a = threshold_median(coarsen_diff(compute_diff(gdst, gref)))
    b = draw_mask_b(a, rng)
    return merge_and_splice(gdst, gref, b, a)


def random_ratio_mask(gdst: SampledGrid, gref: SampledGrid, ratio: float, rng: Rng) -> MaskedImage:
    """Replace ``round(ratio * cells)`` uniformly chosen cells by reference cells."""
    if not 0.0 <= ratio <= 1.0 or math.isnan(ratio):
        raise RangeError(f"mask ratio {ratio} outside [0, 1]")
    gh, gw = gdst.grid_shape
    n = gh * gw
    k = int(math.floor(ratio * n + 0.5))
    bits = np.zeros(n, dtype=bool)
    bits[rng.sample(n, k)] = True
    b = MaskB(bits.reshape(gh, gw))
    out = merge_and_splice(gdst, gref, b, coarse_or(b.bits))
    out.mode, out.ratio = "random", ratio
    return out


def empty_masks(gh: int, gw: int) -> tuple[MaskA, MaskB]:
    return MaskA(np.zeros((gh // 2, gw // 2), dtype=bool)), MaskB(np.zeros((gh, gw), dtype=bool))
