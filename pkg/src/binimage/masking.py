"""Block masking for the student branch of the self-distillation objective.

The image is tiled into square blocks; a fixed count of blocks, chosen
uniformly at random without replacement, is zeroed. The teacher always
sees the unmasked image, so the mask only ever touches the student input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadConfig, ShapeMismatch
from .preprocess import IMAGE_SIZE


@dataclass
class MaskConfig:
    """Masking knobs: block edge in pixels, fraction of blocks masked."""

    block_size: int = 16
    mask_ratio: float = 0.5
    image_size: int = IMAGE_SIZE

    def __post_init__(self) -> None:
        if self.block_size < 1 or self.image_size % self.block_size != 0:
            raise BadConfig(
                f"image size {self.image_size} not divisible by block size {self.block_size}"
            )
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise BadConfig(f"mask_ratio must be in [0,1], got {self.mask_ratio}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.block_size

    @property
    def total_blocks(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def masked_blocks(self) -> int:
        # round() is round-half-to-even, so ratio 0.5 over 625 blocks gives 312.
        return int(round(self.mask_ratio * self.total_blocks))


@dataclass
class Mask:
    """Boolean block grid (True = masked) plus the block edge for expansion."""

    grid: np.ndarray
    block_size: int

    @property
    def masked_count(self) -> int:
        return int(self.grid.sum())


def generate_mask(config: MaskConfig, rng: np.random.Generator) -> Mask:
    """Draw masked_blocks block indices without replacement from the grid."""
    grid = np.zeros(config.total_blocks, dtype=bool)
    count = config.masked_blocks
    if count > 0:
        chosen = rng.choice(config.total_blocks, size=count, replace=False)
        grid[chosen] = True
    return Mask(grid.reshape(config.grid_size, config.grid_size), config.block_size)


def apply_mask(image: np.ndarray, mask: Mask) -> np.ndarray:
    """Zero the pixels under masked blocks; the input array is not mutated."""
    g = mask.grid.shape[0]
    b = mask.block_size
    if image.shape != (g * b, g * b):
        raise ShapeMismatch(
            f"image shape {image.shape} incompatible with {g}x{g} grid of {b}px blocks"
        )
    pixel_mask = np.repeat(np.repeat(mask.grid, b, axis=0), b, axis=1)
    return np.where(pixel_mask, 0.0, image)
