from __future__ import annotations

import numpy as np

from .discretize import DEFAULT_BIN_WIDTH, check_inputs, discretize
from .names import FIRST_ORDER


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def first_order(image, mask, bin_width: float = DEFAULT_BIN_WIDTH) -> np.ndarray:
    """The 18 intensity statistics over the region, in canonical order.

    Entropy and Uniformity use the discretized histogram; everything else
    uses raw intensities. A zero-variance region gets skewness and kurtosis 0.
    """
    image, mask = check_inputs(image, mask)
    x = image[mask]
    n = x.size
    mu = x.mean()
    dev = x - mu
    m2 = np.mean(dev ** 2)
    m3 = np.mean(dev ** 3)
    m4 = np.mean(dev ** 4)
    p10, p25, p50, p75, p90 = np.percentile(x, [10, 25, 50, 75, 90])
    robust = x[(x >= p10) & (x <= p90)]
    q = discretize(image, mask, bin_width)
    hist = np.bincount(q.levels[mask]).astype(np.float64)[1:] / n
    energy = float(np.sum(x * x))
    values = {
        "10Percentile": p10,
        "90Percentile": p90,
        "Energy": energy,
        "Entropy": _entropy(hist),
        "InterquartileRange": p75 - p25,
        "Kurtosis": m4 / (m2 * m2) if m2 > 0 else 0.0,
        "Maximum": x.max(),
        "MeanAbsoluteDeviation": np.mean(np.abs(dev)),
        "Mean": mu,
        "Median": p50,
        "Minimum": x.min(),
        "Range": x.max() - x.min(),
        "RobustMeanAbsoluteDeviation": np.mean(np.abs(robust - robust.mean())),
        "RootMeanSquared": np.sqrt(energy / n),
        "Skewness": m3 / m2 ** 1.5 if m2 > 0 else 0.0,
        # unit pixel spacing: voxel volume 1
        "TotalEnergy": energy,
        "Uniformity": float(np.sum(hist * hist)),
        "Variance": m2,
    }
    return np.array([values[k] for k in FIRST_ORDER], dtype=np.float64)
