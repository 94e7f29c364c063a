"""Differentiable building blocks used by the transformer branches."""
from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor, make_result, matmul, reshape, transpose, unbroadcast


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), bw, "softmax")


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    s = np.exp(x.data - m).sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = np.exp(x.data - out)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    res = out if keepdims else np.squeeze(out, axis=axis)
    return make_result(res, (x,), bw, "logsumexp")


def layer_norm(x: Tensor, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def bw(g):
        gx = (inv / n) * (n * g - g.sum(axis=-1, keepdims=True)
                          - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        return (gx,)

    out = make_result(xhat, (x,), bw, "layer_norm")
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    out = (x.data * cdf).astype(x.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * (cdf + x.data * pdf),), "gelu")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    out = matmul(x, weight) if x.ndim >= 2 else matmul(reshape(x, (1, -1)), weight)
    if x.ndim < 2:
        out = reshape(out, (-1,))
    if bias is not None:
        out = out + bias
    return out


def embedding(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    return table[idx]


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 0.0) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if np.any(norm <= eps):
        raise ValueError("cannot normalize a zero-norm vector")
    out = x.data / norm

    def bw(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return make_result(out, (x,), bw, "l2_normalize")


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return transpose(reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product attention.

    ``q`` is (B, Nq, D); ``k`` and ``v`` are (B, Nk, D). Returns the merged
    output (B, Nq, D) and the softmaxed weights (B, heads, Nq, Nk).
    """
    d = q.shape[-1]
    if d % heads != 0:
        raise ValueError(f"embedding dim {d} is not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d:
        raise ValueError("q, k, v must share the embedding dim")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = matmul(qh, transpose(kh, (0, 1, 3, 2))) * (1.0 / math.sqrt(d // heads))
    weights = softmax(scores, axis=-1)
    return merge_heads(matmul(weights, vh)), weights


def bilinear_sample(grid: Tensor, points: Tensor) -> Tensor:
    """Sample a (B, H, W, C) feature grid at continuous (x, y) points.

    ``points`` is (B, P, 2) in grid-index coordinates (x = column, y = row).
    Points are clamped to the border; the result is (B, P, C) and is
    differentiable with respect to both the grid and the points (zero
    point-gradient along a clamped coordinate).
    """
    grid, points = as_tensor(grid), as_tensor(points)
    b, h, w, c = grid.shape
    px, py = points.data[..., 0], points.data[..., 1]
    cx = np.clip(px, 0.0, w - 1)
    cy = np.clip(py, 0.0, h - 1)
    inside_x = (px >= 0.0) & (px <= w - 1)
    inside_y = (py >= 0.0) & (py <= h - 1)
    x0 = np.minimum(np.floor(cx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(cy).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (cx - x0)[..., None]
    fy = (cy - y0)[..., None]
    bi = np.arange(b)[:, None]
    g = grid.data
    v00, v01 = g[bi, y0, x0], g[bi, y0, x1]
    v10, v11 = g[bi, y1, x0], g[bi, y1, x1]
    out = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v01 + (1 - fx) * fy * v10 + fx * fy * v11

    def bw(gout):
        ggrid = np.zeros_like(g)
        bb = np.broadcast_to(bi, x0.shape)
        np.add.at(ggrid, (bb, y0, x0), gout * (1 - fx) * (1 - fy))
        np.add.at(ggrid, (bb, y0, x1), gout * fx * (1 - fy))
        np.add.at(ggrid, (bb, y1, x0), gout * (1 - fx) * fy)
        np.add.at(ggrid, (bb, y1, x1), gout * fx * fy)
        dx = ((1 - fy) * (v01 - v00) + fy * (v11 - v10)) * gout
        dy = ((1 - fx) * (v10 - v00) + fx * (v11 - v01)) * gout
        if w == 1:
            dx = np.zeros_like(dx)
        if h == 1:
            dy = np.zeros_like(dy)
        gpts = np.stack([dx.sum(-1) * inside_x, dy.sum(-1) * inside_y], axis=-1)
        return ggrid, gpts.astype(points.dtype, copy=False)

    return make_result(out.astype(g.dtype, copy=False), (grid, points), bw, "bilinear_sample")


def clamp_points(points: Tensor, width: int, height: int) -> Tensor:
    """Clamp (x, y) points inside [0, width-1] x [0, height-1]."""
    points = as_tensor(points)
    hi = np.array([width - 1, height - 1], dtype=points.dtype)
    out = np.clip(points.data, 0.0, hi)
    inside = (points.data >= 0.0) & (points.data <= hi)
    return make_result(out, (points,), lambda g: (g * inside,), "clamp_points")


__all__ = [
    "softmax", "logsumexp", "layer_norm", "gelu", "linear", "embedding", "dropout",
    "l2_normalize", "attention", "bilinear_sample", "clamp_points", "split_heads",
    "merge_heads", "unbroadcast",
]
