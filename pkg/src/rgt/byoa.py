"""Bootstrap-your-own-attention: attention map -> pathology boxes.

threshold top fraction -> max filter + cross dilations -> connected
components -> attention-weighted centroid -> decile gate -> boxes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from .boxes import BoundingBox

MODES = ("train", "test")


@dataclass(frozen=True)
class ByoaConfig:
    keep_fraction: float = 0.1
    max_filter_radius: int = 1
    dilation_iterations: int = 5
    connectivity: int = 8
    decile_fraction: float = 0.1
    mode: str = "train"
    weighted_centroid: bool = True

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise ValueError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if not 0 < self.decile_fraction <= 1:
            raise ValueError(f"decile_fraction must be in (0, 1], got {self.decile_fraction}")
        if self.dilation_iterations < 0 or self.max_filter_radius < 0:
            raise ValueError("dilation_iterations and max_filter_radius must be >= 0")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class ClassBoxPrior:
    """Mean box height and width of one class, in pixels."""

    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"box prior must be positive, got {self.height}x{self.width}")


def load_priors(path) -> Dict[int, ClassBoxPrior]:
    """``{"0": {"height": h, "width": w}, ...}``."""
    with open(path) as fh:
        raw = json.load(fh)
    return priors_from_json(raw)


def priors_from_json(raw: dict) -> Dict[int, ClassBoxPrior]:
    if not isinstance(raw, dict) or not raw:
        raise ValueError("class priors must be a non-empty object")
    return {int(k): ClassBoxPrior(int(v["height"]), int(v["width"])) for k, v in raw.items()}


def priors_to_json(priors: Dict[int, ClassBoxPrior]) -> dict:
    return {str(k): {"height": p.height, "width": p.width} for k, p in sorted(priors.items())}


@dataclass
class Component:
    rows: np.ndarray
    cols: np.ndarray
    centroid: Tuple[int, int]  # (row, col)

    @property
    def size(self) -> int:
        return int(self.rows.size)

    def tight_box(self, class_id: int = 0, score: float = 0.0) -> BoundingBox:
        y0, x0 = int(self.rows.min()), int(self.cols.min())
        return BoundingBox(x0, y0, int(self.cols.max()) - x0 + 1, int(self.rows.max()) - y0 + 1,
                           class_id, score)


def normalize_map(amap) -> np.ndarray:
    """Max-normalize a non-negative map into [0, 1]; an all-zero map stays zero."""
    a = np.asarray(amap, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"attention map must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("attention map contains non-finite values")
    if a.min() < 0:
        raise ValueError("attention map must be non-negative")
    top = a.max()
    return a / top if top > 0 else np.zeros_like(a)


def top_fraction_value(values: np.ndarray, fraction: float) -> float:
    """Value of the k-th largest entry, k = ceil(fraction * n)."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    k = max(1, math.ceil(fraction * flat.size - 1e-9))
    return float(np.partition(flat, flat.size - k)[flat.size - k])


def threshold_top_fraction(amap, fraction: float) -> np.ndarray:
    """Keep pixels at or above the k-th largest value; ties are all kept."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    a = np.asarray(amap, dtype=np.float64)
    return a >= top_fraction_value(a, fraction)


def smooth_and_grow(mask, radius: int = 1, iterations: int = 5) -> np.ndarray:
    """Square max filter of the given radius, then cross-shaped dilations."""
    m = np.asarray(mask, dtype=bool)
    if radius > 0:
        m = ndimage.maximum_filter(m, size=2 * radius + 1, mode="constant", cval=False)
    if iterations > 0:  # scipy treats iterations=0 as "until stable"
        cross = ndimage.generate_binary_structure(2, 1)
        m = ndimage.binary_dilation(m, structure=cross, iterations=iterations)
    return m


def connected_components(mask, weights=None, connectivity: int = 8,
                         weighted: bool = True) -> List[Component]:
    """Components in label order with their (rounded) centre of mass.

    With ``weighted`` the centroid is weighted by ``weights``; a component
    whose weights sum to zero uses the plain pixel mean.
    """
    m = np.asarray(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(2, 2 if connectivity == 8 else 1)
    labels, n = ndimage.label(m, structure=structure)
    w = np.ones(m.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    out = []
    for sl_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        local = labels[sl] == sl_idx
        rows, cols = np.nonzero(local)
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        cw = w[rows, cols] if weighted else np.ones(rows.size)
        total = cw.sum()
        if total <= 0:
            cw, total = np.ones(rows.size), float(rows.size)
        cy = float((cw * rows).sum() / total)
        cx = float((cw * cols).sum() / total)
        out.append(Component(rows, cols, (int(math.floor(cy + 0.5)), int(math.floor(cx + 0.5)))))
    return out


def centered_box(cy: int, cx: int, prior: ClassBoxPrior, height: int, width: int,
                 class_id: int = 0, score: float = 0.0) -> BoundingBox:
    box = BoundingBox(cx - prior.width // 2, cy - prior.height // 2, prior.width, prior.height,
                      class_id, score)
    return box.clip(height, width)


def emit_boxes(components: List[Component], amap, prior: ClassBoxPrior, class_id: int,
               config: ByoaConfig = ByoaConfig()) -> List[BoundingBox]:
    """Boxes for the components whose centroid passes the decile gate,
    sorted by descending centroid attention (stable)."""
    a = np.asarray(amap, dtype=np.float64)
    h, w = a.shape
    gate = top_fraction_value(a, config.decile_fraction)
    boxes = []
    for comp in components:
        cy, cx = comp.centroid
        score = float(a[cy, cx])
        if score < gate:
            continue
        if config.mode == "train":
            boxes.append(centered_box(cy, cx, prior, h, w, class_id, score))
        else:
            boxes.append(comp.tight_box(class_id, score))
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    return [boxes[i] for i in order]


def byoa(amap, prior: ClassBoxPrior, class_id: int,
         config: ByoaConfig = ByoaConfig()) -> List[BoundingBox]:
    a = normalize_map(amap)
    kept = threshold_top_fraction(a, config.keep_fraction)
    grown = smooth_and_grow(kept, config.max_filter_radius, config.dilation_iterations)
    comps = connected_components(grown, a, config.connectivity, config.weighted_centroid)
    return emit_boxes(comps, a, prior, class_id, config)


def boxes_or_fallback(boxes: List[BoundingBox], height: int, width: int,
                      class_id: int = 0) -> Tuple[List[BoundingBox], bool]:
    """The boxes, or the whole-image box when none survived (flag True)."""
    if boxes:
        return boxes, False
    return [BoundingBox.whole_image(height, width, class_id)], True


def overlay(image, amap, boxes: List[BoundingBox]) -> np.ndarray:
    """RGB uint8 heatmap overlay with box outlines, for visual inspection."""
    g = np.asarray(image, dtype=np.float64)
    lo, hi = g.min(), g.max()
    g = (g - lo) / (hi - lo) if hi > lo else np.zeros_like(g)
    a = normalize_map(amap)
    rgb = np.stack([0.6 * g + 0.4 * a, 0.6 * g + 0.4 * a * (1 - a), 0.6 * g], axis=-1)
    rgb = (np.clip(rgb, 0, 1) * 255).round().astype(np.uint8)
    for b in boxes:
        rgb[b.y, b.x:b.x1] = rgb[b.y1 - 1, b.x:b.x1] = (0, 255, 0)
        rgb[b.y:b.y1, b.x] = rgb[b.y:b.y1, b.x1 - 1] = (0, 255, 0)
    return rgb
