"""Separable bicubic resampling (Catmull-Rom, a = -0.5) with reflect borders.

Resizing is expressed as ``Wh @ X @ Ww.T`` where ``Wh`` and ``Ww`` are dense
1-D interpolation matrices. Pixel centres follow the half-pixel convention
``src = (dst + 0.5) / factor - 0.5``. When shrinking, the kernel is widened by
the reduction factor so the result is antialiased (the usual convention for
synthesising low-resolution depth). Both numpy arrays and torch tensors are
accepted; the leading dimensions are treated as batch.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import torch

from .errors import InvalidInputError

CUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Whole-sample reflection (``abcd -> cb|abcd|cb``) of arbitrary integer indices."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


@lru_cache(maxsize=128)
def _weights(n_in: int, n_out: int) -> np.ndarray:
    factor = n_out / n_in
    stretch = min(factor, 1.0)  # < 1 only when shrinking
    support = 2.0 / stretch
    w = np.zeros((n_out, n_in))
    centres = (np.arange(n_out) + 0.5) / factor - 0.5
    for i, c in enumerate(centres):
        taps = np.arange(math.floor(c - support), math.ceil(c + support) + 1)
        k = cubic_kernel((c - taps) * stretch)
        k = k / k.sum()
        np.add.at(w[i], reflect_index(taps, n_in), k)
    w.setflags(write=False)
    return w


def weight_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D bicubic interpolation matrix of shape ``(n_out, n_in)``."""
    if n_in < 1 or n_out < 1:
        raise InvalidInputError(f"sizes must be positive, got {n_in} -> {n_out}")
    return _weights(n_in, n_out)


def resize(x, out_hw: tuple[int, int]):
    """Bicubic resize over the last two axes."""
    h, w = x.shape[-2:]
    wh, ww = weight_matrix(h, out_hw[0]), weight_matrix(w, out_hw[1])
    if isinstance(x, torch.Tensor):
        wh = torch.tensor(wh, dtype=x.dtype, device=x.device)
        ww = torch.tensor(ww, dtype=x.dtype, device=x.device)
        return wh @ x @ ww.transpose(0, 1)
    return wh @ np.asarray(x, dtype=np.float64) @ ww.T


def _check_scale(scale) -> int:
    if int(scale) != scale or scale < 2:
        raise InvalidInputError(f"scale must be an integer >= 2, got {scale!r}")
    return int(scale)


def bicubic_downsample(depth, scale: int):
    """Shrink an HR map by an integer factor; dims must divide evenly."""
    scale = _check_scale(scale)
    h, w = depth.shape[-2:]
    if h % scale or w % scale:
        raise InvalidInputError(f"map {h}x{w} is not divisible by scale {scale}")
    return resize(depth, (h // scale, w // scale))


def bicubic_upsample(depth, scale: int):
    """Enlarge a map by an integer factor with the same cubic kernel."""
    scale = _check_scale(scale)
    h, w = depth.shape[-2:]
    return resize(depth, (h * scale, w * scale))
