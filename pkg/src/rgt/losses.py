"""Training objective: focal loss, cross-view NT-Xent, and their convex mix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, clip, concat, getitem, log, logsumexp, matmul, power

PROB_EPS = 1e-7
VARIANTS = ("standard", "literal")


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.1
    variant: str = "standard"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.5

    def __post_init__(self):
        if not 0 <= self.lam <= 1:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")


def _check_labels(labels: np.ndarray) -> np.ndarray:
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y


def focal_loss(probs, labels, cfg: FocalConfig = FocalConfig(), eps: float = PROB_EPS) -> Tensor:
    """Per-class binary focal loss, averaged over classes and batch.

    ``probs`` are sigmoid outputs, clamped to [eps, 1 - eps] before the log.
    """
    p = clip(as_tensor(probs), eps, 1.0 - eps)
    y = _check_labels(labels).astype(p.dtype)
    if y.shape != p.shape:
        raise ValueError(f"labels shape {y.shape} != probabilities shape {p.shape}")
    q = 1.0 - p
    if cfg.gamma == 0:
        pos = log(p) * (y * cfg.alpha)
        neg = log(q) * ((1.0 - y) * (1.0 - cfg.alpha))
    else:
        pos = power(q, cfg.gamma) * log(p) * (y * cfg.alpha)
        neg = power(p, cfg.gamma) * log(q) * ((1.0 - y) * (1.0 - cfg.alpha))
    return -(pos + neg).mean()


def binary_cross_entropy(probs, labels, eps: float = PROB_EPS) -> Tensor:
    p = clip(as_tensor(probs), eps, 1.0 - eps)
    y = _check_labels(labels).astype(p.dtype)
    return -(log(p) * y + log(1.0 - p) * (1.0 - y)).mean()


def _check_projections(z: Tensor) -> None:
    if z.ndim != 2:
        raise ValueError(f"projections must be (N, d), got {z.shape}")
    if np.any((z.data * z.data).sum(axis=1) == 0):
        raise ValueError("zero-norm projection")


def nt_xent(z_i, z_r, cfg: ContrastiveConfig = ContrastiveConfig()) -> Tensor:
    """Cross-view contrastive loss between image and radiomics projections.

    Both inputs are (N, d) unit vectors; row k of each is a positive pair.
    The standard variant contrasts every anchor against all 2N - 1 other
    projections and averages over the 2N anchors. The literal variant
    normalizes each positive pair by the positive pairs only and sums.
    """
    z_i, z_r = as_tensor(z_i), as_tensor(z_r)
    _check_projections(z_i)
    _check_projections(z_r)
    if z_i.shape != z_r.shape:
        raise ValueError(f"view shapes differ: {z_i.shape} vs {z_r.shape}")
    n = z_i.shape[0]
    if cfg.variant == "literal":
        pos = (z_i * z_r).sum(axis=1) * (1.0 / cfg.tau)
        return -(pos - logsumexp(pos, axis=0)).sum() + 0.0
    z = concat([z_i, z_r], axis=0)
    sim = matmul(z, z.transpose(1, 0)) * (1.0 / cfg.tau)
    rows = np.arange(2 * n)
    positive = getitem(sim, (rows, (rows + n) % (2 * n)))
    cols = np.array([[k for k in range(2 * n) if k != a] for a in rows], dtype=np.int64)
    others = getitem(sim, (rows[:, None], cols))
    return (logsumexp(others, axis=1) - positive).mean()


def combined_loss(l_cl, l_fl, weights: LossWeights = LossWeights()) -> Tensor:
    """(1 - lam) * contrastive + lam * focal."""
    return as_tensor(l_cl) * (1.0 - weights.lam) + as_tensor(l_fl) * weights.lam
