"""Gray-level matrix features (GLCM, GLSZM, GLRLM, GLDM, NGTDM).

All functions take a ``QuantizedRegion`` whose level grid has a zero border
(outside-mask pixels are 0), so shifted slices never wrap.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .discretize import QuantizedRegion
from .names import GLCM, GLDM, GLRLM, GLSZM, NGTDM

#: (drow, dcol) for the four in-plane direction pairs
DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1))
NEIGHBOURS8 = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0))
# coarseness when the NGTDM denominator vanishes
COARSENESS_CAP = 1e6


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0


def _padded(levels: np.ndarray) -> np.ndarray:
    return np.pad(levels, 1)


def _shift(padded: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """View of ``padded`` at offset (dr, dc), aligned with the unpadded grid."""
    h, w = padded.shape[0] - 2, padded.shape[1] - 2
    return padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]


# ---------------------------------------------------------------- GLCM
def glcm_matrices(q: QuantizedRegion) -> np.ndarray:
    """Symmetric co-occurrence counts, shape (4, ng, ng), one per direction."""
    ng = q.ng
    pad = _padded(q.levels)
    out = np.zeros((len(DIRECTIONS), ng, ng), dtype=np.float64)
    for d, (dr, dc) in enumerate(DIRECTIONS):
        a = q.levels
        b = _shift(pad, dr, dc)
        keep = (a > 0) & (b > 0)
        idx = (a[keep] - 1) * ng + (b[keep] - 1)
        m = np.bincount(idx, minlength=ng * ng).reshape(ng, ng).astype(np.float64)
        out[d] = m + m.T
    return out


def _glcm_single(P: np.ndarray) -> dict:
    ng = P.shape[0]
    p = P / P.sum()
    g = np.arange(1, ng + 1, dtype=np.float64)
    gi, gj = g[:, None], g[None, :]
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mux = float((p * gi).sum())
    muy = float((p * gj).sum())
    sx = np.sqrt(float((px * (g - mux) ** 2).sum()))
    sy = np.sqrt(float((py * (g - muy) ** 2).sum()))

    k_diff = np.abs(gi - gj).astype(np.int64)
    pdiff = np.bincount(k_diff.ravel(), weights=p.ravel(), minlength=ng)
    k_sum = (gi + gj).astype(np.int64)
    psum = np.bincount(k_sum.ravel(), weights=p.ravel(), minlength=2 * ng + 1)
    kd = np.arange(pdiff.size, dtype=np.float64)
    ks = np.arange(psum.size, dtype=np.float64)

    hx, hy = _entropy(px), _entropy(py)
    hxy = _entropy(p.ravel())
    pxy = px[:, None] * py[None, :]
    nz = p > 0
    hxy1 = float(-(p[nz] * np.log2(pxy[nz])).sum())
    nzx = pxy > 0
    hxy2 = float(-(pxy[nzx] * np.log2(pxy[nzx])).sum())

    autocorr = float((p * gi * gj).sum())
    centred = gi + gj - mux - muy
    da = float((kd * pdiff).sum())
    f = {
        "Autocorrelation": autocorr,
        "ClusterProminence": float((p * centred ** 4).sum()),
        "ClusterShade": float((p * centred ** 3).sum()),
        "ClusterTendency": float((p * centred ** 2).sum()),
        "Contrast": float((p * (gi - gj) ** 2).sum()),
        "Correlation": (autocorr - mux * muy) / (sx * sy) if sx * sy > 0 else 1.0,
        "DifferenceAverage": da,
        "DifferenceEntropy": _entropy(pdiff),
        "DifferenceVariance": float(((kd - da) ** 2 * pdiff).sum()),
        "Id": float((pdiff / (1 + kd)).sum()),
        "Idm": float((pdiff / (1 + kd ** 2)).sum()),
        "Idmn": float((pdiff / (1 + kd ** 2 / ng ** 2)).sum()),
        "Idn": float((pdiff / (1 + kd / ng)).sum()),
        "Imc1": (hxy - hxy1) / max(hx, hy) if max(hx, hy) > 0 else 0.0,
        "Imc2": float(np.sqrt(max(0.0, 1 - np.exp(-2 * (hxy2 - hxy))))),
        "InverseVariance": float((pdiff[1:] / kd[1:] ** 2).sum()),
        "JointAverage": mux,
        "JointEnergy": float((p * p).sum()),
        "JointEntropy": hxy,
        "MCC": _mcc(p, px, py),
        "MaximumProbability": float(p.max()),
        "SumAverage": float((ks * psum).sum()),
        "SumEntropy": _entropy(psum),
        "SumSquares": float((px * (g - mux) ** 2).sum()),
    }
    return f


def _mcc(p, px, py) -> float:
    rows = np.flatnonzero(px > 0)
    if rows.size < 2:
        return 1.0
    cols = py > 0
    a = p[np.ix_(rows, cols)]
    # Q(i,j) = sum_k p(i,k) p(j,k) / (px(i) py(k))
    Q = (a / px[rows, None]) @ (a / py[None, cols]).T
    ev = np.sort(np.linalg.eigvals(Q).real)
    return float(np.sqrt(max(ev[-2], 0.0)))


def glcm_features(q: QuantizedRegion) -> np.ndarray:
    """24 GLCM features averaged over the non-empty directions.

    A region with no neighbouring pairs in any direction (a single pixel,
    for instance) falls back to the diagonal histogram matrix.
    """
    mats = [m for m in glcm_matrices(q) if m.sum() > 0]
    if not mats:
        hist = np.bincount(q.levels[q.mask] - 1, minlength=q.ng).astype(np.float64)
        mats = [np.diag(hist)]
    feats = [_glcm_single(m) for m in mats]
    return np.array([sum(f[k] for f in feats) / len(feats) for k in GLCM])


# ------------------------------------------- shared (level, size) statistics
def _table_stats(levels: np.ndarray, sizes: np.ndarray, n_pixels: int) -> dict:
    """Statistics of a (gray level, size) count table given as one entry per
    zone/run/pixel. Sizes are zone areas, run lengths or dependence counts."""
    ng = int(levels.max())
    ns = int(sizes.max())
    P = np.zeros((ng, ns), dtype=np.float64)
    np.add.at(P, (levels - 1, sizes - 1), 1.0)
    total = P.sum()
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    j = np.arange(1, ns + 1, dtype=np.float64)[None, :]
    p = P / total
    by_i = P.sum(axis=1)
    by_j = P.sum(axis=0)
    mu_i = float((p * i).sum())
    mu_j = float((p * j).sum())
    return {
        "small": float((P / j ** 2).sum() / total),
        "large": float((P * j ** 2).sum() / total),
        "gln": float((by_i ** 2).sum() / total),
        "glnn": float((by_i ** 2).sum() / total ** 2),
        "sn": float((by_j ** 2).sum() / total),
        "snn": float((by_j ** 2).sum() / total ** 2),
        "pct": float(total / n_pixels),
        "glv": float((p * (i - mu_i) ** 2).sum()),
        "sv": float((p * (j - mu_j) ** 2).sum()),
        "ent": _entropy(p.ravel()),
        "lgl": float((P / i ** 2).sum() / total),
        "hgl": float((P * i ** 2).sum() / total),
        "slgl": float((P / (i ** 2 * j ** 2)).sum() / total),
        "shgl": float((P * i ** 2 / j ** 2).sum() / total),
        "llgl": float((P * j ** 2 / i ** 2).sum() / total),
        "lhgl": float((P * i ** 2 * j ** 2).sum() / total),
    }


_GLSZM_KEYS = ("gln", "glnn", "glv", "hgl", "large", "lhgl", "llgl", "lgl", "sn", "snn",
               "small", "shgl", "slgl", "ent", "pct", "sv")
_GLRLM_KEYS = ("gln", "glnn", "glv", "hgl", "large", "lhgl", "llgl", "lgl", "ent", "sn",
               "snn", "pct", "sv", "small", "shgl", "slgl")
_GLDM_KEYS = ("ent", "sn", "snn", "sv", "gln", "glv", "hgl", "large", "lhgl", "llgl", "lgl",
              "small", "shgl", "slgl")
assert len(_GLSZM_KEYS) == len(GLSZM) and len(_GLRLM_KEYS) == len(GLRLM)
assert len(_GLDM_KEYS) == len(GLDM)


# ---------------------------------------------------------------- GLSZM
def size_zones(q: QuantizedRegion):
    """(level, area) of every 8-connected equal-level zone."""
    structure = np.ones((3, 3), dtype=bool)
    levels, sizes = [], []
    for lev in range(1, q.ng + 1):
        lab, n = ndimage.label(q.levels == lev, structure=structure)
        if n == 0:
            continue
        area = np.bincount(lab.ravel())[1:]
        levels.append(np.full(n, lev))
        sizes.append(area)
    return np.concatenate(levels), np.concatenate(sizes)


def glszm_features(q: QuantizedRegion) -> np.ndarray:
    lv, sz = size_zones(q)
    s = _table_stats(lv, sz, int(q.mask.sum()))
    return np.array([s[k] for k in _GLSZM_KEYS])


# ---------------------------------------------------------------- GLRLM
def _lines(levels: np.ndarray, direction) -> list:
    if direction == (0, 1):
        return list(levels)
    if direction == (1, 0):
        return list(levels.T)
    grid = levels if direction == (1, 1) else levels[:, ::-1]
    h, w = grid.shape
    return [np.diagonal(grid, k) for k in range(-(h - 1), w)]


def runs(q: QuantizedRegion, direction):
    """(level, length) of every maximal equal-level run along ``direction``."""
    pieces = []
    for line in _lines(q.levels, direction):
        pieces.append(line)
        pieces.append(np.zeros(1, dtype=line.dtype))
    seq = np.concatenate(pieces)
    starts = np.flatnonzero(np.diff(np.concatenate(([-1], seq))) != 0)
    lengths = np.diff(np.concatenate((starts, [seq.size])))
    vals = seq[starts]
    keep = vals > 0
    return vals[keep], lengths[keep]


def glrlm_features(q: QuantizedRegion) -> np.ndarray:
    n = int(q.mask.sum())
    per_dir = []
    for d in DIRECTIONS:
        lv, ln = runs(q, d)
        s = _table_stats(lv, ln, n)
        per_dir.append([s[k] for k in _GLRLM_KEYS])
    return np.mean(np.array(per_dir), axis=0)


# ---------------------------------------------------------------- GLDM
def dependence(q: QuantizedRegion) -> np.ndarray:
    """1 + number of 8-neighbours sharing the pixel's level (alpha = 0)."""
    pad = _padded(q.levels)
    dep = np.ones(q.levels.shape, dtype=np.int64)
    for dr, dc in NEIGHBOURS8:
        dep += _shift(pad, dr, dc) == q.levels
    return dep


def gldm_features(q: QuantizedRegion) -> np.ndarray:
    m = q.mask
    s = _table_stats(q.levels[m], dependence(q)[m], int(m.sum()))
    return np.array([s[k] for k in _GLDM_KEYS])


# ---------------------------------------------------------------- NGTDM
def ngtdm_features(q: QuantizedRegion) -> np.ndarray:
    """Neighbourhood tone differences over in-mask 8-neighbours.

    Pixels without any in-mask neighbour are left out. Vanishing
    denominators give Coarseness 1e6 and zero for the other features.
    """
    pad = _padded(q.levels)
    count = np.zeros(q.levels.shape, dtype=np.int64)
    total = np.zeros(q.levels.shape, dtype=np.float64)
    for dr, dc in NEIGHBOURS8:
        nb = _shift(pad, dr, dc)
        count += nb > 0
        total += nb
    valid = q.mask & (count > 0)
    nvp = int(valid.sum())
    if nvp == 0:
        vals = {"Busyness": 0.0, "Coarseness": COARSENESS_CAP, "Complexity": 0.0,
                "Contrast": 0.0, "Strength": 0.0}
        return np.array([vals[k] for k in NGTDM])
    lev = q.levels[valid]
    diff = np.abs(lev - total[valid] / count[valid])
    n = np.bincount(lev, minlength=q.ng + 1)[1:].astype(np.float64)
    s_all = np.bincount(lev, weights=diff, minlength=q.ng + 1)[1:]
    present = n > 0
    i = np.arange(1, q.ng + 1, dtype=np.float64)[present]
    p = n[present] / nvp
    s = s_all[present]
    ngp = i.size
    ps = float((p * s).sum())
    s_total = float(s.sum())
    di = i[:, None] - i[None, :]
    coarse = 1.0 / ps if ps != 0 else COARSENESS_CAP
    contrast = (float((p[:, None] * p[None, :] * di ** 2).sum()) / (ngp * (ngp - 1)) * s_total / nvp
                if ngp > 1 else 0.0)
    ip = i * p
    bden = float(np.abs(ip[:, None] - ip[None, :]).sum())
    busy = ps / bden if bden != 0 else 0.0
    ppair = p[:, None] + p[None, :]
    weighted = p * s
    complexity = float((np.abs(di) * (weighted[:, None] + weighted[None, :]) / ppair).sum()) / nvp
    strength = float((ppair * di ** 2).sum()) / s_total if s_total != 0 else 0.0
    vals = {"Busyness": busy, "Coarseness": coarse, "Complexity": complexity,
            "Contrast": contrast, "Strength": strength}
    return np.array([vals[k] for k in NGTDM])
