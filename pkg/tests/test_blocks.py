import pytest
import torch

from naima.blocks import RCAB, DepthEncoder, ResBlock, RGBEncoder, UpsampleHead
from naima.errors import InvalidInputError
from naima.resample import bicubic_upsample

pytestmark = pytest.mark.usefixtures("f64")


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed))


def test_rcab_shape_and_identity():
    torch.manual_seed(0)
    blk = RCAB(8, 4)
    for hw in ((5, 7), (16, 16)):
        x = rand(2, 8, *hw)
        assert blk(x).shape == x.shape
    blk.zero_branch_()
    x = rand(1, 8, 9, 9)
    assert torch.equal(blk(x), x)


def test_rcab_gate_range():
    torch.manual_seed(1)
    blk = RCAB(16, 4)
    g = blk.ca.gate(blk.conv2(torch.relu(blk.conv1(rand(3, 16, 6, 6)))))
    assert g.shape == (3, 16, 1, 1)
    assert (g > 0).all() and (g < 1).all()


def test_rcab_channel_mismatch():
    with pytest.raises(InvalidInputError):
        RCAB(8, 4)(rand(1, 4, 5, 5))
    with pytest.raises(InvalidInputError):
        RCAB(10, 4)


def test_depth_encoder_levels_keep_shape():
    torch.manual_seed(2)
    x = rand(1, 8, 12, 12)
    encoders = [DepthEncoder(8, 2, 4) for _ in range(4)]
    for enc in encoders:
        x = enc(x)
        assert x.shape == (1, 8, 12, 12)


def test_depth_encoder_zero_branches_is_identity():
    enc = DepthEncoder(8, 3, 4)
    for blk in enc:
        blk.zero_branch_()
    x = rand(1, 8, 7, 7)
    assert torch.equal(enc(x), x)


def test_depth_encoder_gradient_matches_finite_differences():
    torch.manual_seed(3)
    enc = DepthEncoder(8, 2, 4)
    x = rand(1, 8, 5, 5, seed=4).requires_grad_()
    (enc(x) ** 2).sum().backward()
    g = x.grad
    assert g.abs().max() > 0
    h = 1e-6
    for idx in [(0, 0, 0, 0), (0, 3, 2, 4), (0, 7, 4, 1)]:
        xp, xm = x.detach().clone(), x.detach().clone()
        xp[idx] += h
        xm[idx] -= h
        fd = ((enc(xp) ** 2).sum() - (enc(xm) ** 2).sum()) / (2 * h)
        assert fd.item() == pytest.approx(g[idx].item(), rel=1e-5, abs=1e-8)


def test_rgb_encoder_taps():
    torch.manual_seed(5)
    enc = RGBEncoder(8, 2)
    img = rand(1, 3, 14, 28)
    taps = enc.encode_all(img)
    assert len(taps) == 4 and all(t.shape == (1, 8, 14, 28) for t in taps)
    assert all(not torch.allclose(taps[i], taps[i + 1]) for i in range(3))
    assert torch.equal(enc.encode(img, 3), taps[2])
    with pytest.raises(InvalidInputError):
        enc.encode(img, 5)


def test_rgb_encoder_zero_branches_pass_stem():
    enc = RGBEncoder(8, 2)
    for m in enc.modules():
        if isinstance(m, ResBlock):
            m.zero_branch_()
    img = rand(1, 3, 14, 14)
    stem = enc.stem(img)
    assert all(torch.equal(t, stem) for t in enc.encode_all(img))


def test_upsample_head():
    torch.manual_seed(6)
    head = UpsampleHead(8, 2, 4)
    d4, lr = rand(1, 8, 56, 56), rand(1, 1, 14, 14, seed=1)
    out = head(d4, lr, 4)
    assert out.shape == (1, 1, 56, 56)
    assert (out - bicubic_upsample(lr, 4)).abs().max() > 0
    head.zero_branch_()
    assert torch.equal(head(d4, lr, 4), bicubic_upsample(lr, 4))
    with pytest.raises(InvalidInputError):
        head(d4, rand(1, 1, 13, 14), 4)
