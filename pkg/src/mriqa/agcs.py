"""Adaptive grid cropping and sampling.

A patch is divided into ``gw x gh`` equal grids; from every grid a
``wgp x hgp`` block is taken at one shared offset ``(mran, nran)`` and the
blocks are re-assembled in place.  The assembled size depends only on the
model input size, never on the patch size, so no resizing is involved.

Cell arrays are indexed ``[row, col]``: row follows image height (y), col
follows image width (x).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SizeError
from .imaging import Image
from .rng import Rng

GRID = 64
INPUT_SIZE = 256
CROP_MENU = (256, 320, 384, 448, 512)


@dataclass(frozen=True)
class GridSpec:
    gw: int
    gh: int
    wg: int
    hg: int
    wgp: int
    hgp: int
    mran: int
    nran: int

    @property
    def patch_size(self) -> tuple[int, int]:
        return self.wg * self.gw, self.hg * self.gh

    @property
    def input_size(self) -> tuple[int, int]:
        return self.wgp * self.gw, self.hgp * self.gh


@dataclass(eq=False)
class SampledGrid:
    """Sampled cells, shape ``(gh, gw, hgp, wgp, 3)`` uint8."""

    cells: np.ndarray

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.cells.shape[0], self.cells.shape[1]

    @property
    def cell_shape(self) -> tuple[int, int]:
        return self.cells.shape[2], self.cells.shape[3]

    def assemble(self) -> Image:
        gh, gw, hgp, wgp, c = self.cells.shape
        return Image(self.cells.transpose(0, 2, 1, 3, 4).reshape(gh * hgp, gw * wgp, c))

    @classmethod
    def from_image(cls, img: Image, gw: int, gh: int) -> "SampledGrid":
        """Split an already input-sized image into its cell lattice."""
        if img.width % gw or img.height % gh:
            raise DimensionMismatch(f"{img.width}x{img.height} image not divisible into {gw}x{gh} cells")
        hgp, wgp = img.height // gh, img.width // gw
        cells = img.data.reshape(gh, hgp, gw, wgp, 3).transpose(0, 2, 1, 3, 4)
        return cls(np.ascontiguousarray(cells))


def make_grid_spec(
    wp: int,
    hp: int,
    w_input: int = INPUT_SIZE,
    h_input: int = INPUT_SIZE,
    rng: Rng | None = None,
    gw: int = GRID,
    gh: int = GRID,
) -> GridSpec:
    if gw <= 0 or gh <= 0:
        raise SizeError("grid counts must be positive")
    for name, v, g in (("wp", wp, gw), ("hp", hp, gh), ("w_input", w_input, gw), ("h_input", h_input, gh)):
        if v <= 0 or v % g:
            raise SizeError(f"{name}={v} is not a positive multiple of the grid count {g}")
    if wp < w_input or hp < h_input:
        raise SizeError(f"patch {wp}x{hp} smaller than input {w_input}x{h_input}")
    wg, hg = wp // gw, hp // gh
    wgp, hgp = w_input // gw, h_input // gh
    # offsets are inclusive of wg - wgp so that input-sized patches map to offset 0
    if rng is None:
        mran = nran = 0
    else:
        mran = rng.randint(0, wg - wgp)
        nran = rng.randint(0, hg - hgp)
    return GridSpec(gw, gh, wg, hg, wgp, hgp, mran, nran)


def sample_grids(patch: Image, spec: GridSpec) -> SampledGrid:
    wp, hp = spec.patch_size
    if (patch.width, patch.height) != (wp, hp):
        raise DimensionMismatch(f"patch {patch.width}x{patch.height} does not match grid spec {wp}x{hp}")
    grids = patch.data.reshape(spec.gh, spec.hg, spec.gw, spec.wg, 3)
    cells = grids[:, spec.nran : spec.nran + spec.hgp, :, spec.mran : spec.mran + spec.wgp]
    return SampledGrid(np.ascontiguousarray(cells.transpose(0, 2, 1, 3, 4)))
