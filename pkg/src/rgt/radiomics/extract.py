from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np

from ..boxes import BoundingBox
from .discretize import DEFAULT_BIN_WIDTH, check_inputs, discretize
from .firstorder import first_order
from .names import NUM_FEATURES, QUALIFIED_NAMES
from .shape import shape_features
from .texture import (glcm_features, gldm_features, glrlm_features, glszm_features,
                      ngtdm_features)


@dataclass(frozen=True)
class ExtractionSettings:
    bin_width: float = DEFAULT_BIN_WIDTH


def crop_to_region(image: np.ndarray, mask: np.ndarray):
    """Crop image and mask to the mask's bounding box plus a one-pixel border.

    Outside-image border pixels are zero-padded and masked out. Working on the
    crop makes every feature exactly translation invariant.
    """
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    img = np.pad(image[r0:r1, c0:c1], 1)
    msk = np.pad(mask[r0:r1, c0:c1], 1)
    return img, msk


def _as_mask(shape, mask_or_box) -> np.ndarray:
    if isinstance(mask_or_box, BoundingBox):
        return mask_or_box.to_mask(*shape)
    if isinstance(mask_or_box, tuple) and len(mask_or_box) == 4:
        return BoundingBox(*mask_or_box).to_mask(*shape)
    return np.asarray(mask_or_box, dtype=bool)


def extract_all(image, mask_or_box: Union[np.ndarray, BoundingBox, tuple],
                settings: ExtractionSettings = ExtractionSettings()) -> np.ndarray:
    """107 radiomic features of the region in canonical order."""
    image = np.asarray(image, dtype=np.float64)
    mask = _as_mask(image.shape, mask_or_box)
    image, mask = check_inputs(image, mask)
    img, msk = crop_to_region(image, mask)
    q = discretize(img, msk, settings.bin_width)
    out = np.concatenate([
        shape_features(msk),
        first_order(img, msk, settings.bin_width),
        glcm_features(q),
        gldm_features(q),
        glrlm_features(q),
        glszm_features(q),
        ngtdm_features(q),
    ])
    assert out.shape == (NUM_FEATURES,)
    return out


def as_dict(vector: np.ndarray) -> Dict[str, float]:
    return {k: float(v) for k, v in zip(QUALIFIED_NAMES, vector)}


def to_json(vector: np.ndarray) -> str:
    """``{"features": {name: value}, "values": [...]}`` with full precision."""
    return json.dumps({"features": as_dict(vector), "values": [float(v) for v in vector]},
                      indent=2)


def to_csv(rows, ids=None) -> str:
    """CSV with the canonical header; ``ids`` adds a leading id column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((["id"] if ids is not None else []) + list(QUALIFIED_NAMES))
    for n, row in enumerate(rows):
        lead = [ids[n]] if ids is not None else []
        w.writerow(lead + [repr(float(v)) for v in row])
    return buf.getvalue()
