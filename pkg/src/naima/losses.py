"""Gradient-aware L1 reconstruction loss."""
from __future__ import annotations

import torch

from .config import LossConfig
from .errors import InvalidInputError


def spatial_gradients(d: torch.Tensor):
    """Forward differences over the last two axes; last column/row of the result is zero."""
    if d.dim() < 2 or d.shape[-1] < 2 or d.shape[-2] < 2:
        raise InvalidInputError(f"map must be at least 2x2, got {tuple(d.shape)}")
    gx = torch.cat([d[..., :, 1:] - d[..., :, :-1], torch.zeros_like(d[..., :, :1])], dim=-1)
    gy = torch.cat([d[..., 1:, :] - d[..., :-1, :], torch.zeros_like(d[..., :1, :])], dim=-2)
    return gx, gy


def _same(pred, gt):
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def l1_loss(pred, gt):
    """Mean absolute difference over all elements."""
    _same(pred, gt)
    return (pred - gt).abs().mean()


def grad_loss(pred, gt):
    _same(pred, gt)
    px, py = spatial_gradients(pred)
    gx, gy = spatial_gradients(gt)
    return l1_loss(px, gx) + l1_loss(py, gy)


def total_loss(pred, gt, config: LossConfig | None = None):
    config = config or LossConfig()
    lam = config.effective_lambda
    loss = l1_loss(pred, gt)
    if lam:
        loss = loss + lam * grad_loss(pred, gt)
    return loss
