"""Dual-branch radiomics-guided transformer.

Image branch: patch features, progressive token sampling, encoder blocks.
Radiomics branch: one token per feature, no positional encoding.
The two CLS tokens exchange information by cross-attending over the other
branch's patch tokens, then feed the classifier and projection heads.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .autodiff import (EncoderBlock, LayerNorm, Linear, Module, ModuleList, MultiHeadAttention,
                       Parameter, Tensor, bilinear_sample, broadcast_to, clamp_points, concat,
                       gelu, l2_normalize, sigmoid, trunc_normal)

CLASSIFIERS = ("average", "concat")
DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class RGTConfig:
    image_size: int = 64
    patch_size: int = 4
    grid_size: int = 8  # sampling points per side
    sampling_iters: int = 4
    dim: int = 32
    heads: int = 4
    image_depth: int = 6
    radiomics_depth: int = 2
    fusion_layers: int = 1
    mlp_ratio: float = 2.0
    num_radiomics: int = 107
    num_classes: int = 2
    proj_dim: int = 16
    classifier: str = "average"
    project_after_fusion: bool = False  # project the pre-fusion CLS tokens
    dropout: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if min(self.image_depth, self.radiomics_depth) < 1 or self.fusion_layers < 0:
            raise ValueError("branch depths must be >= 1 and fusion_layers >= 0")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size "
                             f"{self.patch_size}")
        if self.sampling_iters < 0 or self.grid_size < 1:
            raise ValueError("sampling_iters must be >= 0 and grid_size >= 1")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {tuple(DTYPES)}")
        if min(self.num_radiomics, self.num_classes, self.proj_dim) < 1:
            raise ValueError("num_radiomics, num_classes and proj_dim must be >= 1")

    @property
    def feature_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    @classmethod
    def tiny(cls, **kw) -> "RGTConfig":
        """Small double-precision config used for gradient checks."""
        base = dict(image_size=12, patch_size=2, grid_size=3, sampling_iters=2, dim=8, heads=2,
                    image_depth=2, radiomics_depth=1, fusion_layers=1, num_radiomics=2,
                    num_classes=2, proj_dim=4, dtype="float64")
        base.update(kw)
        return cls(**base)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class BranchOutput:
    cls: Tensor  # (B, d)
    tokens: Tensor  # (B, N, d)
    attention: np.ndarray  # last block weights (B, heads, 1+N, 1+N)
    points: Optional[np.ndarray] = None  # final sampling points (B, N, 2) as (x, y)
    branch: str = "image"


def grid_points(feature_size: int, grid_size: int) -> np.ndarray:
    """Regular (x, y) sampling points in feature-grid coordinates, (g*g, 2)."""
    u = (np.arange(grid_size) + 0.5) * feature_size / grid_size - 0.5
    yy, xx = np.meshgrid(u, u, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W) -> (B, H/p, W/p, p*p)."""
    b, h, w = images.shape
    if h % patch or w % patch:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch}")
    x = images.reshape(b, h // patch, patch, w // patch, patch)
    return x.transpose(0, 1, 3, 2, 4).reshape(b, h // patch, w // patch, patch * patch)


class ImageBranch(Module):
    def __init__(self, cfg: RGTConfig, rng: np.random.Generator):
        super().__init__()
        dt = cfg.np_dtype
        self.cfg = cfg
        d = cfg.dim
        self.patch_embed = Linear(cfg.patch_size ** 2, d, rng, dtype=dt)
        self.pos_embed = Linear(2, d, rng, dtype=dt)
        # zero-initialized so the first forward samples the regular grid
        self.offsets = ModuleList([Linear(d, 2, rng, dtype=dt, zero_init=True)
                                   for _ in range(cfg.sampling_iters)])
        self.cls_token = Parameter(trunc_normal(rng, (1, 1, d), dtype=dt))
        self.blocks = ModuleList([EncoderBlock(d, cfg.heads, cfg.mlp_ratio, rng, dt, cfg.dropout)
                                  for _ in range(cfg.image_depth)])
        self.norm = LayerNorm(d, dtype=dt)

    def feature_grid(self, images: np.ndarray) -> Tensor:
        x = patchify(np.asarray(images, dtype=self.cfg.np_dtype), self.cfg.patch_size)
        return self.patch_embed(Tensor(x))

    def _position(self, points: Tensor) -> Tensor:
        scale = 2.0 / max(self.cfg.feature_size - 1, 1)
        return self.pos_embed(points * scale - 1.0)

    def sample_tokens(self, grid: Tensor):
        """Progressive sampling; returns (tokens, final points)."""
        cfg = self.cfg
        b = grid.shape[0]
        fs = cfg.feature_size
        base = grid_points(fs, cfg.grid_size).astype(cfg.np_dtype)
        points = Tensor(np.broadcast_to(base, (b,) + base.shape).copy())
        for head in self.offsets:
            feats = bilinear_sample(grid, points) + self._position(points)
            points = clamp_points(points + head(feats), fs, fs)
        tokens = bilinear_sample(grid, points) + self._position(points)
        return tokens, points

    def tokenize(self, images: np.ndarray) -> Tensor:
        """Fixed-grid tokens: one per patch with positional information, CLS first."""
        grid = self.feature_grid(images)
        b, h, w, d = grid.shape
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(self.cfg.np_dtype)
        tokens = grid.reshape(b, h * w, d) + self._position(Tensor(pts))
        return self._prepend_cls(tokens)

    def _prepend_cls(self, tokens: Tensor) -> Tensor:
        b = tokens.shape[0]
        return concat([broadcast_to(self.cls_token, (b, 1, self.cfg.dim)), tokens], axis=1)

    def forward(self, images: np.ndarray, rng=None) -> BranchOutput:
        grid = self.feature_grid(images)
        tokens, points = self.sample_tokens(grid)
        x = self._prepend_cls(tokens)
        weights = None
        for blk in self.blocks:
            x, weights = blk(x, rng)
        x = self.norm(x)
        return BranchOutput(x[:, 0, :], x[:, 1:, :], weights.data, points.data, "image")


class RadiomicsBranch(Module):
    """Each scalar feature k becomes the token r_k * W_k + b_k."""

    def __init__(self, cfg: RGTConfig, rng: np.random.Generator):
        super().__init__()
        dt = cfg.np_dtype
        self.cfg = cfg
        self.embed_weight = Parameter(trunc_normal(rng, (cfg.num_radiomics, cfg.dim), dtype=dt))
        self.embed_bias = Parameter(np.zeros((cfg.num_radiomics, cfg.dim), dtype=dt))
        self.cls_token = Parameter(trunc_normal(rng, (1, 1, cfg.dim), dtype=dt))
        self.blocks = ModuleList([EncoderBlock(cfg.dim, cfg.heads, cfg.mlp_ratio, rng, dt,
                                               cfg.dropout) for _ in range(cfg.radiomics_depth)])
        self.norm = LayerNorm(cfg.dim, dtype=dt)

    def forward(self, features, rng=None) -> BranchOutput:
        r = np.asarray(features.data if isinstance(features, Tensor) else features,
                       dtype=self.cfg.np_dtype)
        if r.ndim != 2 or r.shape[1] != self.cfg.num_radiomics:
            raise ValueError(f"expected (B, {self.cfg.num_radiomics}) radiomics, got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("radiomics input contains NaN or Inf")
        tokens = Tensor(r[:, :, None]) * self.embed_weight + self.embed_bias
        b = r.shape[0]
        x = concat([broadcast_to(self.cls_token, (b, 1, self.cfg.dim)), tokens], axis=1)
        weights = None
        for blk in self.blocks:
            x, weights = blk(x, rng)
        x = self.norm(x)
        return BranchOutput(x[:, 0, :], x[:, 1:, :], weights.data, None, "radiomics")


class CrossFusion(Module):
    """Each CLS token queries the other branch's patch tokens, with a residual."""

    def __init__(self, dim: int, heads: int, rng, dtype):
        super().__init__()
        self.norm_i = LayerNorm(dim, dtype=dtype)
        self.norm_r = LayerNorm(dim, dtype=dtype)
        self.attn_i = MultiHeadAttention(dim, heads, rng, dtype)
        self.attn_r = MultiHeadAttention(dim, heads, rng, dtype)

    def forward(self, cls_i: Tensor, cls_r: Tensor, tok_i: Tensor, tok_r: Tensor):
        qi = self.norm_i(cls_i.reshape(cls_i.shape[0], 1, cls_i.shape[1]))
        qr = self.norm_r(cls_r.reshape(cls_r.shape[0], 1, cls_r.shape[1]))
        kv_r = self.norm_r(tok_r)
        kv_i = self.norm_i(tok_i)
        ai, _ = self.attn_i(qi, kv_r)
        ar, _ = self.attn_r(qr, kv_i)
        return cls_i + ai[:, 0, :], cls_r + ar[:, 0, :]


class ProjectionHead(Module):
    def __init__(self, dim: int, out: int, rng, dtype):
        super().__init__()
        self.fc1 = Linear(dim, dim, rng, dtype=dtype)
        self.fc2 = Linear(dim, out, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return l2_normalize(self.fc2(gelu(self.fc1(x))), axis=-1)


@dataclass
class RGTOutput:
    probs: Tensor
    logits: Tensor
    z_i: Tensor
    z_r: Tensor
    image: BranchOutput
    radiomics: BranchOutput


class RGT(Module):
    def __init__(self, cfg: RGTConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        dt = cfg.np_dtype
        self.cfg = cfg
        self.image = ImageBranch(cfg, rng)
        self.radiomics = RadiomicsBranch(cfg, rng)
        self.fusion = ModuleList([CrossFusion(cfg.dim, cfg.heads, rng, dt)
                                  for _ in range(cfg.fusion_layers)])
        if cfg.classifier == "average":
            self.head_i = Linear(cfg.dim, cfg.num_classes, rng, dtype=dt)
            self.head_r = Linear(cfg.dim, cfg.num_classes, rng, dtype=dt)
        else:
            self.head = Linear(2 * cfg.dim, cfg.num_classes, rng, dtype=dt)
        self.proj_i = ProjectionHead(cfg.dim, cfg.proj_dim, rng, dt)
        self.proj_r = ProjectionHead(cfg.dim, cfg.proj_dim, rng, dt)

    def fuse(self, img: BranchOutput, rad: BranchOutput):
        ci, cr = img.cls, rad.cls
        for layer in self.fusion:
            ci, cr = layer(ci, cr, img.tokens, rad.tokens)
        return ci, cr

    def classify(self, cls_i: Tensor, cls_r: Tensor):
        """(probabilities, logits)."""
        if self.cfg.classifier == "average":
            logits = (self.head_i(cls_i) + self.head_r(cls_r)) * 0.5
        else:
            logits = self.head(concat([cls_i, cls_r], axis=1))
        return sigmoid(logits), logits

    def heads(self, img: BranchOutput, rad: BranchOutput) -> RGTOutput:
        ci, cr = self.fuse(img, rad)
        probs, logits = self.classify(ci, cr)
        if self.cfg.project_after_fusion:
            zi, zr = self.proj_i(ci), self.proj_r(cr)
        else:
            zi, zr = self.proj_i(img.cls), self.proj_r(rad.cls)
        return RGTOutput(probs, logits, zi, zr, img, rad)

    def forward(self, images: np.ndarray, radiomics: np.ndarray, rng=None) -> RGTOutput:
        """Full forward with radiomics given (treated as constants)."""
        img = self.image(images, rng)
        rad = self.radiomics(radiomics, rng)
        return self.heads(img, rad)


# ------------------------------------------------------------------ attention maps
def _upsample_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation with half-pixel centres, clamped at the borders."""
    src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
    lo = np.minimum(np.floor(src).astype(int), max(n_in - 2, 0))
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), np.minimum(lo + 1, n_in - 1)] += frac
    return m


def splat(values: np.ndarray, coords: np.ndarray, size: int) -> np.ndarray:
    """Bilinearly distribute ``values`` at (x, y) ``coords`` onto a size x size grid."""
    out = np.zeros((size, size))
    x = np.clip(coords[:, 0], 0, size - 1)
    y = np.clip(coords[:, 1], 0, size - 1)
    x0 = np.minimum(np.floor(x).astype(int), max(size - 2, 0))
    y0 = np.minimum(np.floor(y).astype(int), max(size - 2, 0))
    fx, fy = x - x0, y - y0
    x1, y1 = np.minimum(x0 + 1, size - 1), np.minimum(y0 + 1, size - 1)
    np.add.at(out, (y0, x0), values * (1 - fx) * (1 - fy))
    np.add.at(out, (y0, x1), values * fx * (1 - fy))
    np.add.at(out, (y1, x0), values * (1 - fx) * fy)
    np.add.at(out, (y1, x1), values * fx * fy)
    return out


def cls_attention_map(out: BranchOutput, cfg: RGTConfig) -> np.ndarray:
    """Per-image CLS attention maps (B, S, S), each max-normalized to [0, 1].

    CLS-row weights of the last image block are averaged over heads, placed
    at each token's final sampling point, and upsampled to the image size.
    """
    if out.branch != "image":
        raise ValueError("attention maps come from the image branch only")
    w = out.attention[:, :, 0, 1:].mean(axis=1)  # (B, N)
    g = cfg.grid_size
    up = _upsample_matrix(cfg.image_size, g)
    maps = []
    for b in range(w.shape[0]):
        u = (out.points[b] + 0.5) * g / cfg.feature_size - 0.5
        m = up @ splat(w[b].astype(np.float64), u, g) @ up.T
        m = np.clip(m, 0.0, None)
        top = m.max()
        maps.append(m / top if top > 0 else np.zeros_like(m))
    return np.stack(maps)


# ------------------------------------------------------------------ gradient check
def full_model_gradcheck(cfg: Optional[RGTConfig] = None, seed: int = 0, batch: int = 2,
                         scale: float = 0.3, eps: float = 1e-5):
    """Finite-difference check of every parameter through the combined loss.

    Parameters are redrawn at ``scale`` so the offset heads are nonzero and
    the sampling points move. The default step sits near the float64 optimum
    for central differences; some tensors (the fusion queries when projecting
    pre-fusion CLS tokens) have gradients small enough that a 1e-6 step is
    dominated by rounding. Returns {parameter name: relative error}.
    """
    from .autodiff import grad_check_report
    from .losses import combined_loss, focal_loss, nt_xent

    cfg = cfg or RGTConfig.tiny()
    if cfg.dtype != "float64":
        raise ValueError("gradient checks need float64")
    rng = np.random.default_rng(seed)
    model = RGT(cfg, seed=seed)
    names, params = zip(*model.named_parameters())
    for p in params:
        p.data[...] = rng.normal(scale=scale, size=p.shape)
    images = rng.normal(size=(batch, cfg.image_size, cfg.image_size))
    radiomics = rng.normal(size=(batch, cfg.num_radiomics))
    labels = rng.integers(0, 2, size=(batch, cfg.num_classes))

    def loss():
        out = model(images, radiomics)
        return combined_loss(nt_xent(out.z_i, out.z_r), focal_loss(out.probs, labels))

    return grad_check_report(loss, list(params), eps=eps, names=list(names))
