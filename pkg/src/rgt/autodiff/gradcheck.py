"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], param: Tensor, eps: float) -> np.ndarray:
    flat = param.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f().data)
        flat[i] = orig - eps
        lo = float(f().data)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return out.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|, 1e-12) over one parameter tensor."""
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(diff / scale)


def grad_check_report(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
                      names: Sequence[str] = None) -> Dict[str, float]:
    """Relative error per parameter tensor; ``f`` must be deterministic."""
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    report = {}
    for i, p in enumerate(params):
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)
        numeric = numerical_grad(f, p, eps)
        report[names[i] if names else str(i)] = relative_error(analytic, numeric)
    return report


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Max over parameters of the analytic-vs-central-difference relative error."""
    report = grad_check_report(f, params, eps)
    return max(report.values()) if report else 0.0
