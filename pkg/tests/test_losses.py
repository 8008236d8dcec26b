import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from naima.config import LossConfig
from naima.errors import ConfigError, InvalidInputError
from naima.losses import grad_loss, l1_loss, spatial_gradients, total_loss


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_constant_map_has_zero_gradients():
    gx, gy = spatial_gradients(torch.full((5, 7), 3.25, dtype=torch.float64))
    assert not gx.any() and not gy.any()


def test_horizontal_ramp_stencil():
    d = torch.arange(6, dtype=torch.float64).expand(4, 6)
    gx, gy = spatial_gradients(d)
    assert gx.tolist() == [[1.0, 1.0, 1.0, 1.0, 1.0, 0.0]] * 4
    assert gy.tolist() == [[0.0] * 6] * 4


def test_vertical_ramp_stencil():
    d = torch.arange(4, dtype=torch.float64)[:, None].expand(4, 3) * 2
    gx, gy = spatial_gradients(d)
    assert gy.tolist() == [[2.0] * 3, [2.0] * 3, [2.0] * 3, [0.0] * 3]
    assert not gx.any()


def test_transpose_swaps_gradients():
    d = rand(5, 8)
    gx, gy = spatial_gradients(d)
    tx, ty = spatial_gradients(d.T)
    assert torch.equal(tx, gy.T) and torch.equal(ty, gx.T)


def test_gradients_keep_shape_and_batch():
    d = rand(2, 1, 6, 9)
    gx, gy = spatial_gradients(d)
    assert gx.shape == gy.shape == d.shape


@pytest.mark.parametrize("shape", [(1, 5), (5, 1), (1, 1), (7,)])
def test_gradients_reject_tiny_maps(shape):
    with pytest.raises(InvalidInputError):
        spatial_gradients(torch.zeros(shape))


@settings(max_examples=30, deadline=None)
@given(h=st.integers(2, 6), w=st.integers(2, 6), seed=st.integers(0, 10**6))
def test_stencil_matches_oracle(h, w, seed):
    d = rand(h, w, seed=seed)
    gx, gy = spatial_gradients(d)
    ox, oy = oracles.forward_diff(d.tolist())
    assert gx.tolist() == ox and gy.tolist() == oy


def test_l1_cases():
    gt = rand(6, 6)
    assert l1_loss(gt, gt).item() == 0.0
    assert l1_loss(gt + 0.5, gt).item() == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 10**6))
def test_l1_matches_oracle(h, w, seed):
    a, b = rand(h, w, seed=seed), rand(h, w, seed=seed + 1)
    assert l1_loss(a, b).item() == pytest.approx(oracles.l1(a.tolist(), b.tolist()), abs=1e-13)


def test_shape_mismatch():
    with pytest.raises(InvalidInputError):
        l1_loss(torch.zeros(3, 3), torch.zeros(3, 4))
    with pytest.raises(InvalidInputError):
        total_loss(torch.zeros(3, 3), torch.zeros(4, 3))


def test_grad_loss_ramp_vs_flat_oracle():
    ramp = torch.arange(5, dtype=torch.float64).expand(4, 5) * 0.3
    flat = torch.zeros(4, 5, dtype=torch.float64)
    px, py = oracles.forward_diff(ramp.tolist())
    gx, gy = oracles.forward_diff(flat.tolist())
    want = oracles.l1(px, gx) + oracles.l1(py, gy)
    assert grad_loss(ramp, flat).item() == pytest.approx(want, abs=1e-15)
    # 16 of 20 horizontal differences equal 0.3
    assert want == pytest.approx(0.3 * 16 / 20)


def test_grad_loss_translation_invariant():
    # values on a 2^-10 grid, so adding a small dyadic constant is exact
    pred = torch.round(rand(7, 7) * 1024) / 1024
    gt = torch.round(rand(7, 7, seed=1) * 1024) / 1024
    assert grad_loss(pred + 0.25, gt).item() == grad_loss(pred, gt).item()
    assert grad_loss(gt + 1.0, gt).item() == 0.0


def test_total_loss_cases():
    gt = rand(8, 8)
    assert total_loss(gt, gt).item() == 0.0
    offset = total_loss(gt + 0.5, gt, LossConfig(lam=0.05))
    assert offset.item() == pytest.approx(0.5, abs=1e-12)
    assert grad_loss(gt + 0.5, gt).item() == pytest.approx(0.0, abs=1e-12)
    pred = rand(8, 8, seed=4)
    assert total_loss(pred, gt, LossConfig(lam=0.0)).item() == l1_loss(pred, gt).item()
    assert total_loss(pred, gt, LossConfig(kind="l1")).item() == l1_loss(pred, gt).item()
    want = l1_loss(pred, gt) + 0.05 * grad_loss(pred, gt)
    assert total_loss(pred, gt).item() == want.item()


def test_total_loss_zero_only_at_equality():
    gt = rand(4, 4)
    pred = gt.clone()
    pred[2, 3] += 1e-9
    assert total_loss(pred, gt).item() > 0


def test_negative_lambda_rejected():
    with pytest.raises(ConfigError):
        LossConfig(lam=-0.1)
    with pytest.raises(ConfigError):
        LossConfig(kind="ssim")


def test_l1_subgradient_matches_finite_differences():
    gt = rand(5, 6)
    pred = (gt + rand(5, 6, seed=9)).requires_grad_(True)
    diff = (pred - gt).detach()
    assert (diff.abs() > 1e-3).all()
    l1_loss(pred, gt).backward()
    assert torch.equal(pred.grad, torch.sign(diff) / diff.numel())
    h = 1e-6
    base = pred.detach()
    for idx in [(0, 0), (2, 3), (4, 5)]:
        up, dn = base.clone(), base.clone()
        up[idx] += h
        dn[idx] -= h
        fd = (l1_loss(up, gt) - l1_loss(dn, gt)).item() / (2 * h)
        assert fd == pytest.approx(pred.grad[idx].item(), abs=1e-4)


def test_losses_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = torch.as_tensor(rng.normal(size=(4, 5)))
        b = torch.as_tensor(rng.normal(size=(4, 5)))
        assert l1_loss(a, b) >= 0 and grad_loss(a, b) >= 0 and total_loss(a, b) >= 0
