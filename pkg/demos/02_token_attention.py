# Semantic tokens at patch resolution, lifted to the depth grid and injected by gated attention.
import torch

from naima.gta import CrossAttentionInject, TokenProjection, align_tokens, pixel_shuffle
from naima.tokens import StubProvider

torch.manual_seed(0)
rgb = torch.rand(1, 3, 56, 84)
provider = StubProvider(embed_dim=48)
tokens = provider.extract_tokens(rgb)
print("token grid per level:", tokens.grid_shape, "layers", tokens.source_layer_indices)
print("same image, same tokens:", torch.equal(tokens.levels[2], provider.extract_tokens(rgb).levels[2]))

# 2x2 sub-pixel rearrangement, spelled out on one tiny tensor
x = torch.arange(8.0).reshape(1, 8, 1, 1)
print("pixel_shuffle of 0..7 with r=2:")
print(pixel_shuffle(x, 2)[0])

proj = TokenProjection(48, 16 * 4)
f = align_tokens(proj(tokens.levels[0]), (56, 84), r=2)
print("projected, shuffled, resized:", tuple(f.shape))

e = torch.randn(1, 16, 56, 84)
att = CrossAttentionInject(16, alpha_init=0.0)
print("alpha = 0 leaves depth features unchanged:", torch.equal(att(e, f), e))

with torch.no_grad():
    att.alpha.fill_(0.5)
    out, weights = att(e[..., :8, :8], f[..., :8, :8], return_attention=True)
print("attention matrix", tuple(weights.shape), "rows sum to 1:",
      torch.allclose(weights.sum(-1), torch.ones(1, 64)))
print("mean |update| with alpha 0.5:", (out - e[..., :8, :8]).abs().mean().item())
