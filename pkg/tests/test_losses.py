import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgt.autodiff import Tensor, backward, grad_check
from rgt.losses import (ContrastiveConfig, FocalConfig, LossWeights, binary_cross_entropy,
                        combined_loss, focal_loss, nt_xent)


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def ntxent_loop(zi, zr, tau):
    """Per-anchor loop over the 2N projections."""
    z = np.concatenate([zi, zr])
    n2 = len(z)
    total = 0.0
    for a in range(n2):
        p = (a + n2 // 2) % n2
        num = math.exp(z[a] @ z[p] / tau)
        den = sum(math.exp(z[a] @ z[k] / tau) for k in range(n2) if k != a)
        total += -math.log(num / den)
    return total / n2


# ------------------------------------------------------------ focal
def test_focal_perfect_prediction_is_zero():
    assert focal_loss(np.array([[1.0, 0.0]]), np.array([[1, 0]])).item() == pytest.approx(0, abs=1e-12)


def test_focal_hand_value():
    v = focal_loss(np.array([[0.5]]), np.array([[1]]), FocalConfig(0.25, 2.0)).item()
    assert v == pytest.approx(0.25 * 0.25 * math.log(2), rel=1e-12)
    assert v == pytest.approx(0.043321, abs=1e-6)


def test_focal_reduces_to_half_bce():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = rng.uniform(1e-6, 1 - 1e-6, size=(2, 3))
        y = rng.integers(0, 2, size=(2, 3))
        f = focal_loss(p, y, FocalConfig(0.5, 0.0)).item()
        assert abs(f - 0.5 * binary_cross_entropy(p, y).item()) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-4, 1 - 1e-4), st.floats(1e-4, 1 - 1e-4))
def test_focal_nonnegative_and_monotone(a, b):
    lo, hi = sorted((a, b))
    pos = [focal_loss(np.array([[p]]), np.array([[1]])).item() for p in (lo, hi)]
    neg = [focal_loss(np.array([[p]]), np.array([[0]])).item() for p in (lo, hi)]
    assert min(pos + neg) >= 0
    assert pos[0] >= pos[1] and neg[0] <= neg[1]


def test_focal_matches_direct_formula_and_gradcheck():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.05, 0.95, (4, 3))
    y = rng.integers(0, 2, (4, 3))
    a, g = 0.25, 2.0
    direct = np.mean(-a * y * (1 - p) ** g * np.log(p) - (1 - a) * (1 - y) * p ** g * np.log(1 - p))
    assert focal_loss(p, y).item() == pytest.approx(direct, rel=1e-12)
    t = Tensor(p, requires_grad=True)
    assert grad_check(lambda: focal_loss(t, y), [t]) < 1e-6


def test_focal_rejects_non_binary_labels():
    with pytest.raises(ValueError):
        focal_loss(np.array([[0.3]]), np.array([[0.5]]))


# ------------------------------------------------------------ NT-Xent
def test_literal_single_identical_pair_is_zero():
    z = np.array([[0.6, 0.8]])
    assert nt_xent(z, z, ContrastiveConfig(variant="literal")).item() == 0.0


def test_standard_orthogonal_log3():
    e = np.eye(4)
    v = nt_xent(e[:2], e[2:], ContrastiveConfig(tau=1.0)).item()
    assert v == pytest.approx(math.log(3), rel=1e-12)


@pytest.mark.parametrize("n,tau", [(1, 0.1), (3, 0.5), (6, 0.1), (5, 2.0)])
def test_standard_matches_loop(n, tau):
    rng = np.random.default_rng(n)
    zi, zr = unit_rows(rng, n, 4), unit_rows(rng, n, 4)
    v = nt_xent(zi, zr, ContrastiveConfig(tau=tau)).item()
    assert v == pytest.approx(ntxent_loop(zi, zr, tau), rel=1e-10)


def test_literal_matches_formula():
    rng = np.random.default_rng(4)
    zi, zr = unit_rows(rng, 5, 3), unit_rows(rng, 5, 3)
    s = np.exp((zi * zr).sum(1) / 0.1)
    expected = -np.sum(np.log(s / s.sum()))
    v = nt_xent(zi, zr, ContrastiveConfig(variant="literal")).item()
    assert v == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("variant", ["standard", "literal"])
def test_permutation_invariance(variant):
    rng = np.random.default_rng(7)
    zi, zr = unit_rows(rng, 8, 5), unit_rows(rng, 8, 5)
    perm = rng.permutation(8)
    cfg = ContrastiveConfig(variant=variant)
    assert abs(nt_xent(zi, zr, cfg).item() - nt_xent(zi[perm], zr[perm], cfg).item()) < 1e-12


def test_rotation_invariance():
    rng = np.random.default_rng(8)
    zi, zr = unit_rows(rng, 6, 4), unit_rows(rng, 6, 4)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = nt_xent(zi, zr).item()
    b = nt_xent(zi @ q, zr @ q).item()
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("variant", ["standard", "literal"])
def test_ntxent_gradcheck(variant):
    rng = np.random.default_rng(2)
    zi = Tensor(unit_rows(rng, 3, 4), requires_grad=True)
    zr = Tensor(unit_rows(rng, 3, 4), requires_grad=True)
    cfg = ContrastiveConfig(tau=0.5, variant=variant)
    assert grad_check(lambda: nt_xent(zi, zr, cfg), [zi, zr]) < 1e-6


def test_zero_norm_projection_rejected():
    with pytest.raises(ValueError):
        nt_xent(np.zeros((2, 3)), np.ones((2, 3)) / math.sqrt(3))


# ------------------------------------------------------------ combined
def test_combined_endpoints_bitwise():
    lc, lf = Tensor(np.array(1.2345678901)), Tensor(np.array(0.987654321))
    assert combined_loss(lc, lf, LossWeights(0.0)).item() == lc.item()
    assert combined_loss(lc, lf, LossWeights(1.0)).item() == lf.item()


def test_combined_arithmetic():
    assert combined_loss(2.0, 1.0, LossWeights(0.7)).item() == pytest.approx(1.3, abs=1e-15)


@pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
def test_combined_gradient_scaling(lam):
    lc, lf = Tensor(np.array(2.0), requires_grad=True), Tensor(np.array(1.0), requires_grad=True)
    backward(combined_loss(lc, lf, LossWeights(lam)))
    assert lc.grad == 1.0 - lam and lf.grad == lam


@pytest.mark.parametrize("cls,kwargs", [(FocalConfig, dict(alpha=1.5)), (FocalConfig, dict(gamma=-1)),
                                        (ContrastiveConfig, dict(tau=0)),
                                        (ContrastiveConfig, dict(variant="x")),
                                        (LossWeights, dict(lam=1.1))])
def test_config_validation(cls, kwargs):
    with pytest.raises(ValueError):
        cls(**kwargs)
