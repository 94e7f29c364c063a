"""Axis-aligned integer boxes shared by radiomics, BYOA and the metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel rectangle ``[x, x+w) x [y, y+h)``."""

    x: int
    y: int
    w: int
    h: int
    class_id: int = 0
    score: float = 0.0

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box {self.w}x{self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h

    def within(self, height: int, width: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x1 <= width and self.y1 <= height

    def clip(self, height: int, width: int) -> "BoundingBox":
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        return BoundingBox(x0, y0, x1 - x0, y1 - y0, self.class_id, self.score)

    def to_mask(self, height: int, width: int) -> np.ndarray:
        if not self.within(height, width):
            raise ValueError(f"box {self} outside {height}x{width} image")
        m = np.zeros((height, width), dtype=bool)
        m[self.y:self.y1, self.x:self.x1] = True
        return m

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    def to_json(self) -> dict:
        return {"class": int(self.class_id), "x": int(self.x), "y": int(self.y),
                "w": int(self.w), "h": int(self.h), "score": float(self.score)}

    @classmethod
    def from_json(cls, d: dict) -> "BoundingBox":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]),
                   int(d.get("class", 0)), float(d.get("score", 0.0)))

    @classmethod
    def whole_image(cls, height: int, width: int, class_id: int = 0) -> "BoundingBox":
        return cls(0, 0, width, height, class_id, 0.0)


def parse_box(text: str, class_id: int = 0) -> BoundingBox:
    """Parse ``"x,y,w,h"``."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise ValueError(f"expected x,y,w,h, got {text!r}")
    x, y, w, h = (int(p) for p in parts)
    return BoundingBox(x, y, w, h, class_id)
