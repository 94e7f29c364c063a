from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BIN_WIDTH = 25.0


class EmptyRegionError(ValueError):
    pass


@dataclass
class QuantizedRegion:
    """Gray levels 1..ng inside the mask, 0 outside."""

    levels: np.ndarray
    ng: int
    bin_width: float

    @property
    def mask(self) -> np.ndarray:
        return self.levels > 0


def check_inputs(image: np.ndarray, mask: np.ndarray):
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if mask.shape != image.shape:
        raise ValueError(f"mask shape {mask.shape} != image shape {image.shape}")
    if not mask.any():
        raise EmptyRegionError("region of interest is empty")
    if not np.all(np.isfinite(image[mask])):
        raise ValueError("non-finite intensities inside the region")
    return image, mask


def discretize(image, mask, bin_width: float = DEFAULT_BIN_WIDTH) -> QuantizedRegion:
    """Fixed-bin-width quantization anchored at the region minimum.

    ``level = floor((I - min_in_mask) / bin_width) + 1`` for in-mask pixels.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    image, mask = check_inputs(image, mask)
    lo = image[mask].min()
    levels = np.zeros(image.shape, dtype=np.int64)
    levels[mask] = np.floor((image[mask] - lo) / bin_width).astype(np.int64) + 1
    return QuantizedRegion(levels, int(levels.max()), float(bin_width))
