"""Convolutional building blocks: RCAB depth encoder, residual RGB encoder, upsample head."""
from __future__ import annotations

import torch
from torch import nn

from .errors import InvalidInputError
from .resample import bicubic_upsample


def conv3x3(cin: int, cout: int, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, padding=1, bias=bias)


def _zero_(conv: nn.Conv2d) -> None:
    with torch.no_grad():
        conv.weight.zero_()
        if conv.bias is not None:
            conv.bias.zero_()


def _check_channels(x: torch.Tensor, channels: int, who: str) -> None:
    if x.dim() != 4 or x.shape[1] != channels:
        raise InvalidInputError(f"{who}: expected (B, {channels}, H, W), got {tuple(x.shape)}")


class ChannelAttention(nn.Module):
    """Global average pool -> 1x1 bottleneck -> ReLU -> 1x1 -> sigmoid gate."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        if channels % reduction:
            raise InvalidInputError(f"channels {channels} not divisible by reduction {reduction}")
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.squeeze = nn.Conv2d(channels, channels // reduction, 1)
        self.excite = nn.Conv2d(channels // reduction, channels, 1)

    def gate(self, x):
        return torch.sigmoid(self.excite(torch.relu(self.squeeze(self.pool(x)))))

    def forward(self, x):
        return x * self.gate(x)


class RCAB(nn.Module):
    """Residual channel attention block: ``x + CA(conv(relu(conv(x))))``."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.channels = channels
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)
        self.ca = ChannelAttention(channels, reduction)

    def branch(self, x):
        return self.ca(self.conv2(torch.relu(self.conv1(x))))

    def forward(self, x):
        _check_channels(x, self.channels, "RCAB")
        return x + self.branch(x)

    def zero_branch_(self):
        _zero_(self.conv2)


class ResBlock(nn.Module):
    """Plain residual block without channel attention."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)

    def forward(self, x):
        return x + self.conv2(torch.relu(self.conv1(x)))

    def zero_branch_(self):
        _zero_(self.conv2)


class DepthEncoder(nn.Sequential):
    """One level of the depth encoder: a stack of RCABs at fixed resolution."""

    def __init__(self, channels: int, n_blocks: int = 4, reduction: int = 16):
        super().__init__(*(RCAB(channels, reduction) for _ in range(n_blocks)))
        self.channels = channels

    def forward(self, x):
        _check_channels(x, self.channels, "DepthEncoder")
        return super().forward(x)


class RGBEncoder(nn.Module):
    """Shared residual trunk over the HR image with one tap per level.

    Level ``i`` continues from the level ``i-1`` output, so ``encode_all``
    returns four progressively deeper feature maps at input resolution.
    """

    def __init__(self, channels: int, blocks_per_level: int = 2, n_levels: int = 4):
        super().__init__()
        self.stem = conv3x3(3, channels)
        self.levels = nn.ModuleList(
            nn.Sequential(*(ResBlock(channels) for _ in range(blocks_per_level))) for _ in range(n_levels)
        )

    def encode_all(self, rgb):
        _check_channels(rgb, 3, "RGBEncoder")
        x = self.stem(rgb)
        taps = []
        for level in self.levels:
            x = level(x)
            taps.append(x)
        return taps

    def encode(self, rgb, level: int):
        """Feature tap for 1-indexed ``level``."""
        if not 1 <= level <= len(self.levels):
            raise InvalidInputError(f"level must be in 1..{len(self.levels)}, got {level}")
        return self.encode_all(rgb)[level - 1]

    forward = encode_all


class UpsampleHead(nn.Module):
    """Maps HR depth features to one channel and adds the bicubic skip."""

    def __init__(self, channels: int, n_rcab: int = 2, reduction: int = 16):
        super().__init__()
        self.conv_in = conv3x3(channels, channels)
        self.body = nn.Sequential(*(RCAB(channels, reduction) for _ in range(n_rcab)))
        self.conv_out = conv3x3(channels, 1)

    def residual(self, d4):
        return self.conv_out(self.body(self.conv_in(d4)))

    def forward(self, d4, d_lr, scale: int):
        res = self.residual(d4)
        skip = bicubic_upsample(d_lr, scale)
        if res.shape != skip.shape:
            raise InvalidInputError(
                f"head output {tuple(res.shape)} does not match bicubic skip {tuple(skip.shape)}"
            )
        return res + skip

    def zero_branch_(self):
        _zero_(self.conv_out)
