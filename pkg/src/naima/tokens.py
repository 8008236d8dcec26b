"""Semantic token providers.

Both providers map a normalized ``(B, 3, H, W)`` image (H, W multiples of 14)
to a :class:`TokenSet` of four ``(B, embed_dim, H/14, W/14)`` grids.

``PretrainedProvider`` runs a frozen ViT with the DINOv2 parameter layout and
taps four intermediate blocks. ``StubProvider`` has no weights: it derives a
smooth pseudo-random field from a hash of the image so that the whole package
can be exercised offline.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidInputError, ProviderInitError

PATCH = 14


@dataclass(frozen=True)
class TokenSet:
    levels: tuple[torch.Tensor, ...]
    source_layer_indices: tuple[int, ...]
    embed_dim: int

    def __post_init__(self):
        if len(self.levels) != 4:
            raise InvalidInputError(f"expected 4 token levels, got {len(self.levels)}")
        shapes = {tuple(t.shape) for t in self.levels}
        if len(shapes) != 1:
            raise InvalidInputError(f"token grids differ in shape: {sorted(shapes)}")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return tuple(self.levels[0].shape[-2:])


def _check_image(rgb: torch.Tensor) -> torch.Tensor:
    if rgb.dim() == 3:
        rgb = rgb.unsqueeze(0)
    if rgb.dim() != 4 or rgb.shape[1] != 3:
        raise InvalidInputError(f"expected a (B, 3, H, W) image, got {tuple(rgb.shape)}")
    H, W = rgb.shape[-2:]
    if H % PATCH or W % PATCH:
        raise InvalidInputError(f"image {H}x{W} is not divisible by the patch size {PATCH}")
    return rgb


class StubProvider:
    """Weight-free provider returning hash-seeded, spatially smoothed tokens.

    For each image, level and seed a Philox key is derived from
    ``sha256(seed, sha256(image bytes), level)``; the counter stream is read in
    row-major ``(channel, y, x)`` order, so each grid position maps to a fixed
    counter. Uniform draws are rescaled to unit variance and smoothed with a
    3x3 binomial kernel (edge-replicated borders).
    """

    kind = "stub"

    def __init__(self, embed_dim: int = 384, seed: int = 0, layers=(3, 6, 9, 12)):
        if embed_dim <= 0:
            raise InvalidInputError("embed_dim must be > 0")
        self.embed_dim = embed_dim
        self.seed = seed
        self.layers = tuple(layers)

    @staticmethod
    def checksum(image: np.ndarray) -> bytes:
        return hashlib.sha256(np.ascontiguousarray(image, dtype="<f8").tobytes()).digest()

    def _grid(self, digest: bytes, level: int, h: int, w: int) -> np.ndarray:
        key_src = hashlib.sha256(
            self.seed.to_bytes(8, "little", signed=True) + digest + level.to_bytes(4, "little")
        ).digest()
        key = np.frombuffer(key_src[:16], dtype="<u8")
        gen = np.random.Generator(np.random.Philox(key=key))
        u = (gen.random((self.embed_dim, h, w)) * 2.0 - 1.0) * math.sqrt(3.0)
        p = np.pad(u, ((0, 0), (1, 1), (1, 1)), mode="edge")
        k = (1.0, 2.0, 1.0)
        rows = sum(k[i] * p[:, i : i + h, :] for i in range(3)) / 4.0
        out = sum(k[j] * rows[:, :, j : j + w] for j in range(3)) / 4.0
        return out / 0.375  # 0.375**2 = sum of squared 2D binomial weights

    def extract_tokens(self, rgb: torch.Tensor) -> TokenSet:
        rgb = _check_image(rgb)
        h, w = rgb.shape[-2] // PATCH, rgb.shape[-1] // PATCH
        images = rgb.detach().to("cpu", torch.float64).numpy()
        per_level = [[] for _ in range(4)]
        for img in images:
            digest = self.checksum(img)
            for level in range(4):
                per_level[level].append(self._grid(digest, level, h, w))
        levels = tuple(
            torch.as_tensor(np.stack(g), dtype=rgb.dtype, device=rgb.device) for g in per_level
        )
        return TokenSet(levels, self.layers, self.embed_dim)

    __call__ = extract_tokens

    def parameters(self):
        return iter(())


# ---------------------------------------------------------------------------
# ViT with the DINOv2 state-dict layout


class _Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2])
        return self.proj(out.transpose(1, 2).reshape(B, N, C))


class _Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class _LayerScale(nn.Module):
    def __init__(self, dim, init=1e-5):
        super().__init__()
        self.gamma = nn.Parameter(torch.full((dim,), init))

    def forward(self, x):
        return x * self.gamma


class _Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = _Attention(dim, heads)
        self.ls1 = _LayerScale(dim)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = _Mlp(dim, int(dim * mlp_ratio))
        self.ls2 = _LayerScale(dim)

    def forward(self, x):
        x = x + self.ls1(self.attn(self.norm1(x)))
        return x + self.ls2(self.mlp(self.norm2(x)))


class PatchEmbed(nn.Module):
    def __init__(self, dim, patch=PATCH):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, patch, stride=patch)

    def forward(self, x):
        return self.proj(x).flatten(2).transpose(1, 2)


class VisionTransformer(nn.Module):
    """Plain ViT/14; defaults are the ViT-S/14 geometry (384-d, 12 blocks, 6 heads)."""

    def __init__(self, embed_dim=384, depth=12, heads=6, mlp_ratio=4.0, pos_grid=37):
        super().__init__()
        self.embed_dim = embed_dim
        self.patch_embed = PatchEmbed(embed_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, 1 + pos_grid * pos_grid, embed_dim))
        self.mask_token = nn.Parameter(torch.zeros(1, embed_dim))
        self.blocks = nn.ModuleList(_Block(embed_dim, heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(embed_dim, eps=1e-6)

    def _pos(self, h, w):
        cls_pos, grid = self.pos_embed[:, :1], self.pos_embed[:, 1:]
        n = int(math.isqrt(grid.shape[1]))
        if (h, w) != (n, n):
            grid = grid.reshape(1, n, n, -1).permute(0, 3, 1, 2)
            grid = F.interpolate(grid, size=(h, w), mode="bicubic", align_corners=False)
            grid = grid.permute(0, 2, 3, 1).reshape(1, h * w, -1)
        return torch.cat([cls_pos, grid], dim=1)

    def intermediate_tokens(self, x, layers):
        """Patch tokens after each 1-indexed block in ``layers`` (before the final norm)."""
        B, _, H, W = x.shape
        h, w = H // PATCH, W // PATCH
        t = self.patch_embed(x)
        t = torch.cat([self.cls_token.expand(B, -1, -1), t], dim=1) + self._pos(h, w)
        wanted = set(layers)
        taps = {}
        for i, blk in enumerate(self.blocks, 1):
            t = blk(t)
            if i in wanted:
                taps[i] = t[:, 1:].transpose(1, 2).reshape(B, self.embed_dim, h, w)
        return [taps[i] for i in layers]


class PretrainedProvider:
    """Frozen ViT provider. ``weights_path`` holds a DINOv2-style state dict."""

    kind = "pretrained"

    def __init__(self, weights_path, layers=(3, 6, 9, 12), **vit_kwargs):
        path = Path(weights_path) if weights_path else None
        if path is None or not path.is_file():
            raise ProviderInitError(f"semantic encoder weights not found: {weights_path}")
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:  # torch raises many types for bad files
            raise ProviderInitError(f"cannot read semantic encoder weights {path}: {exc}") from exc
        if "pos_embed" in state:
            vit_kwargs.setdefault("embed_dim", state["pos_embed"].shape[-1])
            vit_kwargs.setdefault("pos_grid", math.isqrt(state["pos_embed"].shape[1] - 1))
            vit_kwargs.setdefault("depth", 1 + max(int(k.split(".")[1]) for k in state if k.startswith("blocks.")))
            # every DINOv2 variant uses 64-d heads
            vit_kwargs.setdefault("heads", max(1, vit_kwargs["embed_dim"] // 64))
        self.vit = VisionTransformer(**vit_kwargs)
        try:
            self.vit.load_state_dict(state, strict=True)
        except RuntimeError as exc:
            raise ProviderInitError(f"weights in {path} do not match the ViT layout: {exc}") from exc
        if max(layers) > len(self.vit.blocks) or min(layers) < 1:
            raise ProviderInitError(f"token layers {layers} outside 1..{len(self.vit.blocks)}")
        self.vit.eval()
        self.vit.requires_grad_(False)
        self.layers = tuple(layers)
        self.embed_dim = self.vit.embed_dim

    def parameters(self):
        return self.vit.parameters()

    @torch.no_grad()
    def extract_tokens(self, rgb: torch.Tensor) -> TokenSet:
        rgb = _check_image(rgb)
        p = next(self.vit.parameters())
        grids = self.vit.intermediate_tokens(rgb.to(p.device, p.dtype), self.layers)
        levels = tuple(g.to(rgb.device, rgb.dtype) for g in grids)
        return TokenSet(levels, self.layers, self.embed_dim)

    __call__ = extract_tokens


def stub_provider(embed_dim: int = 384, seed: int = 0) -> StubProvider:
    return StubProvider(embed_dim, seed)


def make_provider(config):
    """Provider selected by ``semantic_encoder.kind`` in a :class:`ModelConfig`."""
    if config.provider == "stub":
        return StubProvider(config.embed_dim, config.stub_seed, config.token_layers)
    provider = PretrainedProvider(config.weights_path, config.token_layers)
    if provider.embed_dim != config.embed_dim:
        raise ProviderInitError(
            f"weights have embed_dim {provider.embed_dim}, config expects {config.embed_dim}"
        )
    return provider
