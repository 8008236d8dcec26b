"""Guided Token Attention and the full four-level NAIMA model.

Per level ``i`` (``D_0`` is a stem conv over the bicubic-upsampled LR depth)::

    E_i  = depth_encoder_i(D_{i-1})
    F_i  = align(pixel_shuffle(P_i(tau_i)))          # tokens -> HR grid
    D*_i = E_i + alpha_i * softmax(Q K^T / sqrt(d_k)) V   (naima)
    D*_i = E_i + F_i                                      (naima_plus)
    D_i  = fuse(D*_i, R*_i)

and ``D_hr = head(D_4) + bicubic_upsample(D_lr)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import RCAB, DepthEncoder, RGBEncoder, UpsampleHead, _zero_, conv3x3
from .config import ModelConfig
from .errors import AttentionBudgetError, InvalidInputError, NumericalError
from .resample import bicubic_upsample
from .tokens import PATCH, TokenSet, make_provider


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """``out[c, y*r+dy, x*r+dx] = in[c*r*r + dy*r + dx, y, x]`` on (B, C*r*r, h, w) input."""
    if r < 1 or x.shape[-3] % (r * r):
        raise InvalidInputError(f"{x.shape[-3]} channels not divisible by r^2 = {r * r}")
    return F.pixel_shuffle(x, r)


class TokenProjection(nn.Module):
    """Conv projection of a token grid to ``channels * r^2`` maps at token resolution."""

    def __init__(self, embed_dim: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        self.embed_dim = embed_dim
        self.conv = nn.Conv2d(embed_dim, out_channels, kernel_size, padding=kernel_size // 2)

    def forward(self, tau):
        if tau.shape[-3] != self.embed_dim:
            raise InvalidInputError(f"token grid has {tau.shape[-3]} channels, expected {self.embed_dim}")
        return self.conv(tau)


def align_tokens(s: torch.Tensor, target_hw, r: int = 2) -> torch.Tensor:
    """Pixel-shuffle by ``r`` then bilinearly resize to ``target_hw`` if needed."""
    f = pixel_shuffle(s, r)
    if tuple(f.shape[-2:]) != tuple(target_hw):
        f = F.interpolate(f, size=tuple(target_hw), mode="bilinear", align_corners=False)
    return f


def scaled_dot_attention(q, k, v):
    """Single-head attention on (B, N, d) inputs; returns ``(A @ v, A)``."""
    # scale q rather than the N x N logits
    logits = (q / math.sqrt(q.shape[-1])) @ k.transpose(-1, -2)
    attn = torch.softmax(logits, dim=-1)
    return attn @ v, attn


class _ChunkedAttention(torch.autograd.Function):
    """Same result as :func:`scaled_dot_attention` without the attention matrix.

    Query rows are processed in blocks that stay in cache; the backward pass
    recomputes each block from the saved row log-sum-exp.
    """

    @staticmethod
    def forward(ctx, q, k, v, chunk):
        qs = q / math.sqrt(q.shape[-1])
        kt = k.transpose(-1, -2)
        out = q.new_empty(q.shape[:-1] + (v.shape[-1],))
        lse = q.new_empty(q.shape[:-1])
        for s in range(0, q.shape[-2], chunk):
            rows = slice(s, s + chunk)
            logits = qs[..., rows, :] @ kt
            m = torch.logsumexp(logits, -1, keepdim=True)
            out[..., rows, :] = logits.sub_(m).exp_() @ v
            lse[..., rows] = m[..., 0]
        ctx.save_for_backward(qs, k, v, out, lse)
        ctx.chunk = chunk
        return out

    @staticmethod
    @torch.autograd.function.once_differentiable
    def backward(ctx, dout):
        qs, k, v, out, lse = ctx.saved_tensors
        kt, vt = k.transpose(-1, -2), v.transpose(-1, -2)
        dq = torch.empty_like(qs)
        dk = torch.zeros_like(k)
        dv = torch.zeros_like(v)
        delta = (dout * out).sum(-1)
        for s in range(0, qs.shape[-2], ctx.chunk):
            rows = slice(s, s + ctx.chunk)
            a = (qs[..., rows, :] @ kt).sub_(lse[..., rows, None]).exp_()
            dv += a.transpose(-1, -2) @ dout[..., rows, :]
            ds = (dout[..., rows, :] @ vt).sub_(delta[..., rows, None]).mul_(a)
            dq[..., rows, :] = ds @ k
            dk += ds.transpose(-1, -2) @ qs[..., rows, :]
        return dq / math.sqrt(qs.shape[-1]), dk, dv, None


def chunked_attention(q, k, v, chunk: int = 64):
    return _ChunkedAttention.apply(q, k, v, chunk)


def _flatten(x):
    return x.flatten(2).transpose(1, 2)  # (B, C, H, W) -> (B, N, C)


class CrossAttentionInject(nn.Module):
    """Gated cross-attention: depth features query semantic features.

    With ``raw_qkv`` the projections are skipped and ``Q = E``, ``K = V = F``.
    """

    def __init__(self, channels: int, d_k: int | None = None, alpha_init: float = 0.0,
                 raw_qkv: bool = False, max_n: int = 16384):
        super().__init__()
        d_k = channels if d_k is None else d_k
        if d_k <= 0:
            raise InvalidInputError("d_k must be > 0")
        self.channels, self.d_k, self.max_n, self.raw_qkv = channels, d_k, max_n, raw_qkv
        if raw_qkv:
            if d_k != channels:
                raise InvalidInputError("raw_qkv requires d_k == channels")
            self.q = self.k = self.v = None
        else:
            self.q = nn.Linear(channels, d_k, bias=False)
            self.k = nn.Linear(channels, d_k, bias=False)
            self.v = nn.Linear(channels, channels, bias=False)
        self.alpha = nn.Parameter(torch.tensor(float(alpha_init)))

    def forward(self, e, f, level=None, return_attention=False):
        if e.shape != f.shape or e.shape[1] != self.channels:
            raise InvalidInputError(
                f"E {tuple(e.shape)} and F {tuple(f.shape)} must match with {self.channels} channels"
            )
        B, C, H, W = e.shape
        n = H * W
        if n > self.max_n:
            raise AttentionBudgetError(
                f"{n} positions exceed attention.max_n = {self.max_n} (needs {n * n} attention weights)"
            )
        ef, ff = _flatten(e), _flatten(f)
        if self.raw_qkv:
            q, k, v = ef, ff, ff
        else:
            q, k, v = self.q(ef), self.k(ff), self.v(ff)
        if return_attention:
            out, attn = scaled_dot_attention(q, k, v)
        else:
            out, attn = chunked_attention(q, k, v), None
        # a non-finite logit poisons its softmax row, hence the N x C output
        if not torch.isfinite(out).all():
            raise NumericalError("non-finite attention logits", level)
        out = e + self.alpha * out.transpose(1, 2).reshape(B, C, H, W)
        return (out, attn) if return_attention else out


class FusionBlock(nn.Module):
    """Simplified symmetric fusion: concat -> 1x1 -> RCAB -> 1x1 -> residual add."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.reduce = nn.Conv2d(2 * channels, channels, 1)
        self.rcab = RCAB(channels, reduction)
        self.out = nn.Conv2d(channels, channels, 1)

    def forward(self, d_star, r_star):
        if d_star.shape != r_star.shape:
            raise InvalidInputError(f"fusion inputs differ: {tuple(d_star.shape)} vs {tuple(r_star.shape)}")
        return d_star + self.out(self.rcab(self.reduce(torch.cat([d_star, r_star], dim=1))))

    def zero_branch_(self):
        _zero_(self.out)


@dataclass
class Features:
    """Intermediate maps from one forward pass (lists are per level, 1..4)."""

    d0: torch.Tensor
    tokens: TokenSet
    e: list
    f: list
    d_star: list
    r_star: list
    d: list
    out: torch.Tensor


class NaimaModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None, provider=None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        C, r = cfg.channels, cfg.shuffle_factor
        # kept out of the module registry: the provider is frozen and never checkpointed
        self.__dict__["token_provider"] = provider if provider is not None else make_provider(cfg)
        if self.token_provider.embed_dim != cfg.embed_dim:
            raise InvalidInputError(
                f"provider embed_dim {self.token_provider.embed_dim} != config {cfg.embed_dim}"
            )
        self.depth_stem = conv3x3(1, C)
        self.depth_encoders = nn.ModuleList(
            DepthEncoder(C, cfg.rcab_per_level, cfg.reduction) for _ in range(cfg.n_levels)
        )
        self.projections = nn.ModuleList(
            TokenProjection(cfg.embed_dim, C * r * r, cfg.projection_kernel) for _ in range(cfg.n_levels)
        )
        self.attention = nn.ModuleList(
            CrossAttentionInject(C, cfg.d_k, cfg.alpha_init, cfg.raw_qkv, cfg.max_n)
            for _ in range(cfg.n_levels)
        )
        self.rgb_encoder = RGBEncoder(C, cfg.rgb_blocks_per_level, cfg.n_levels)
        self.fusion = nn.ModuleList(FusionBlock(C, cfg.reduction) for _ in range(cfg.n_levels))
        self.head = UpsampleHead(C, cfg.head_rcabs, cfg.reduction)

    @property
    def scale(self) -> int:
        return self.config.scale

    def features(self, rgb, d_lr, scale=None, variant=None) -> Features:
        scale = self.config.scale if scale is None else scale
        variant = variant or self.config.variant
        if variant not in ("naima", "naima_plus"):
            raise InvalidInputError(f"unknown variant {variant!r}")
        if rgb.dim() == 3:
            rgb = rgb.unsqueeze(0)
        if d_lr.dim() == 2:
            d_lr = d_lr[None, None]
        elif d_lr.dim() == 3:
            d_lr = d_lr.unsqueeze(0)
        H, W = rgb.shape[-2:]
        if H % PATCH or W % PATCH or H % scale or W % scale:
            raise InvalidInputError(f"rgb {H}x{W} must be divisible by {PATCH} and by scale {scale}")
        if tuple(d_lr.shape[-2:]) != (H // scale, W // scale):
            raise InvalidInputError(
                f"LR depth {tuple(d_lr.shape[-2:])} does not match rgb {H}x{W} at scale {scale}"
            )

        tokens = self.token_provider.extract_tokens(rgb)
        r_taps = self.rgb_encoder.encode_all(rgb)
        d = d0 = self.depth_stem(bicubic_upsample(d_lr, scale))
        feats = Features(d0, tokens, [], [], [], [], [], None)
        for i in range(self.config.n_levels):
            e = self.depth_encoders[i](d)
            f = align_tokens(self.projections[i](tokens.levels[i]), (H, W), self.config.shuffle_factor)
            if variant == "naima":
                d_star = self.attention[i](e, f, level=i + 1)
            else:
                d_star = e + f
            d = self.fusion[i](d_star, r_taps[i])
            for bucket, value in zip((feats.e, feats.f, feats.d_star, feats.r_star, feats.d),
                                     (e, f, d_star, r_taps[i], d)):
                bucket.append(value)
        feats.out = self.head(d, d_lr, scale)
        return feats

    def forward(self, rgb, d_lr, scale=None, variant=None):
        return self.features(rgb, d_lr, scale, variant).out

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def build_model(config: ModelConfig | None = None, seed: int = 0, provider=None) -> NaimaModel:
    """Construct a model with parameters drawn from a seeded generator."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return NaimaModel(config, provider)


def naima_forward(model: NaimaModel, rgb, d_lr, scale=None):
    return model(rgb, d_lr, scale, variant="naima")


def naima_plus_forward(model: NaimaModel, rgb, d_lr, scale=None):
    return model(rgb, d_lr, scale, variant="naima_plus")


def zero_residual_(model: NaimaModel) -> NaimaModel:
    """Zero every residual branch and every alpha gate, in place.

    The result maps ``(rgb, d_lr)`` to ``bicubic_upsample(d_lr)`` exactly for the
    ``naima`` variant, and every ``D_i`` equals the stem output ``D_0``.
    Projections are zeroed too so that ``naima_plus`` (where ``F_i`` is added
    without a gate) reduces to the same identity.
    """
    for m in model.modules():
        if hasattr(m, "zero_branch_") and m is not model:
            m.zero_branch_()
    with torch.no_grad():
        for att in model.attention:
            att.alpha.zero_()
        for proj in model.projections:
            _zero_(proj.conv)
    return model
