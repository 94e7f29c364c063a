"""Shape features of a 2-D mask treated as a one-pixel-thick slab.

The surface is built cell by cell over the 2x2 neighbourhoods of the
zero-padded mask, the same way marching cubes would triangulate a single
slice sandwiched between two empty slices at iso-level 0.5. Every vertex lies
on a half-integer lattice, so diameters are exact.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .discretize import check_inputs
from .names import SHAPE

# cell corners in cyclic order, as (drow, dcol)
_CORNERS = ((0, 0), (0, 1), (1, 1), (1, 0))
_HALF = 0.5


def _top(k):
    r, c = _CORNERS[k]
    return (float(r), float(c), _HALF)


def _mid(a, b):
    (ra, ca), (rb, cb) = _CORNERS[a], _CORNERS[b]
    return ((ra + rb) / 2.0, (ca + cb) / 2.0, 0.0)


def _runs(config: int):
    """Maximal cyclic runs of set corners, each as a list of corner ids."""
    bits = [(config >> k) & 1 for k in range(4)]
    if all(bits):
        return [[0, 1, 2, 3]]
    start = bits.index(0)
    runs, cur = [], []
    for step in range(1, 5):
        k = (start + step) % 4
        if bits[k]:
            cur.append(k)
        elif cur:
            runs.append(cur)
            cur = []
    return runs


@lru_cache(maxsize=None)
def _template(config: int) -> np.ndarray:
    """Outward-oriented triangles of the upper half-cell, shape (n, 3, 3)."""
    tris = []
    for run in _runs(config):
        ref = np.array([[*_CORNERS[k], 0.0] for k in run]).mean(axis=0)
        if len(run) == 4:
            t = [_top(k) for k in run]
            pieces = [(t[0], t[1], t[2]), (t[0], t[2], t[3])]
        else:
            m0 = _mid((run[0] - 1) % 4, run[0])
            m1 = _mid(run[-1], (run[-1] + 1) % 4)
            t = [_top(k) for k in run]
            if len(run) == 1:
                pieces = [(m0, t[0], m1)]
            elif len(run) == 2:
                pieces = [(m0, t[0], t[1]), (m0, t[1], m1)]
            else:
                pieces = [(t[0], t[1], t[2]), (m0, t[0], t[2]), (m0, t[2], m1)]
        for tri in pieces:
            a, b, c = (np.array(v) for v in tri)
            normal = np.cross(b - a, c - a)
            if normal @ (ref - a) > 0:
                b, c = c, b
            tris.append((a, b, c))
    if not tris:
        return np.zeros((0, 3, 3))
    return np.array(tris, dtype=np.float64)


def slab_mesh(mask: np.ndarray) -> np.ndarray:
    """Closed triangle mesh of the slab, shape (n, 3, 3) in (row, col, z).

    Row/col are pixel-centre coordinates of the padded mask.
    """
    m = np.pad(np.asarray(mask, dtype=bool), 1).astype(np.int64)
    config = m[:-1, :-1] + 2 * m[:-1, 1:] + 4 * m[1:, 1:] + 8 * m[1:, :-1]
    out = []
    for cfg in range(1, 16):
        rows, cols = np.nonzero(config == cfg)
        if rows.size == 0:
            continue
        tpl = _template(cfg)
        origin = np.stack([rows, cols, np.zeros_like(rows)], axis=1).astype(np.float64)
        top = tpl[None, :, :, :] + origin[:, None, None, :]
        bottom = top.copy()
        bottom[..., 2] *= -1.0
        bottom = bottom[:, :, ::-1, :]  # mirroring flips orientation
        out.append(top.reshape(-1, 3, 3))
        out.append(bottom.reshape(-1, 3, 3))
    return np.concatenate(out)


def mesh_area_volume(tris: np.ndarray):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    cross = np.cross(b - a, c - a)
    area = 0.5 * float(np.sqrt((cross ** 2).sum(axis=1)).sum())
    volume = abs(float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum()) / 6.0)
    return area, volume


def unique_rows(a: np.ndarray):
    """Sorted unique rows and the inverse index (a fast ``np.unique(axis=0)``)."""
    order = np.lexsort(a.T[::-1])
    srt = a[order]
    new = np.r_[True, np.any(srt[1:] != srt[:-1], axis=1)]
    inv = np.empty(len(a), dtype=np.int64)
    inv[order] = np.cumsum(new) - 1
    return srt[new], inv


def _hull(points: np.ndarray) -> np.ndarray:
    """Convex hull vertices of 2-D points; all points when degenerate."""
    pts = unique_rows(points)[0]
    if len(pts) <= 2:
        return pts
    try:
        return pts[ConvexHull(pts).vertices]
    except QhullError:  # collinear: the extremes are among the points
        return pts


def _max_pair(a: np.ndarray, b: np.ndarray) -> float:
    d = a[:, None, :] - b[None, :, :]
    return float(np.sqrt((d ** 2).sum(axis=-1).max()))


def diameters(vertices: np.ndarray):
    """(3-D, slice, column, row) maximum diameters over mesh vertices."""
    zs = np.unique(vertices[:, 2])
    hulls = {z: _hull(vertices[vertices[:, 2] == z][:, :2]) for z in zs}
    d3 = d_slice = 0.0
    for i, z1 in enumerate(zs):
        h1 = np.column_stack([hulls[z1], np.full(len(hulls[z1]), z1)])
        d_slice = max(d_slice, _max_pair(h1, h1))
        for z2 in zs[i:]:
            h2 = np.column_stack([hulls[z2], np.full(len(hulls[z2]), z2)])
            d3 = max(d3, _max_pair(h1, h2))

    def along(axis):
        # vertices sharing a coordinate on `axis`; extremes of the other
        # in-plane axis per z level are enough
        other = 1 - axis
        groups, inv = unique_rows(vertices[:, [axis, 2]])
        lo = np.full(len(groups), np.inf)
        hi = np.full(len(groups), -np.inf)
        np.minimum.at(lo, inv, vertices[:, other])
        np.maximum.at(hi, inv, vertices[:, other])
        best = 0.0
        starts = np.flatnonzero(np.r_[True, groups[1:, 0] != groups[:-1, 0]])
        for a, b in zip(starts, np.r_[starts[1:], len(groups)]):
            z = groups[a:b, 1]
            ext = np.concatenate([np.column_stack([lo[a:b], z]), np.column_stack([hi[a:b], z])])
            best = max(best, _max_pair(ext, ext))
        return best

    return d3, d_slice, along(1), along(0)


def principal_moments(mask: np.ndarray):
    """Eigenvalues (major, minor, least) of the pixel-coordinate covariance.

    The slab axis has zero spread, so the least eigenvalue is 0.
    """
    rows, cols = np.nonzero(mask)
    n = rows.size
    if n < 2:
        return 0.0, 0.0, 0.0
    r = rows - rows.mean()
    c = cols - cols.mean()
    a = float((r * r).sum()) / (n - 1)
    d = float((c * c).sum()) / (n - 1)
    b = float((r * c).sum()) / (n - 1)
    half = 0.5 * (a + d)
    rad = float(np.hypot(0.5 * (a - d), b))
    return half + rad, max(half - rad, 0.0), 0.0


def shape_features(mask) -> np.ndarray:
    """The 14 shape features of a non-empty 2-D mask."""
    mask = np.asarray(mask, dtype=bool)
    check_inputs(np.zeros(mask.shape), mask)
    tris = slab_mesh(mask)
    area, volume = mesh_area_volume(tris)
    verts = unique_rows(tris.reshape(-1, 3))[0]
    d3, d_slice, d_col, d_row = diameters(verts)
    major, minor, least = principal_moments(mask)
    vals = {
        "Elongation": float(np.sqrt(minor / major)) if major > 0 else 1.0,
        "Flatness": float(np.sqrt(least / major)) if major > 0 else 0.0,
        "LeastAxisLength": 4.0 * float(np.sqrt(least)),
        "MajorAxisLength": 4.0 * float(np.sqrt(major)),
        "Maximum2DDiameterColumn": d_col,
        "Maximum2DDiameterRow": d_row,
        "Maximum2DDiameterSlice": d_slice,
        "Maximum3DDiameter": d3,
        "MeshVolume": volume,
        "MinorAxisLength": 4.0 * float(np.sqrt(minor)),
        "Sphericity": float((36.0 * np.pi * volume ** 2) ** (1.0 / 3.0)) / area,
        "SurfaceArea": area,
        "SurfaceVolumeRatio": area / volume,
        "VoxelVolume": float(mask.sum()),
    }
    return np.array([vals[k] for k in SHAPE])
