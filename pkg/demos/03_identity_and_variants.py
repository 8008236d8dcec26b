# With every residual branch zeroed the network is exactly the bicubic skip.
import torch

from naima import ModelConfig, build_model, generate_synthetic_dataset, naima_forward, naima_plus_forward
from naima.data import NormalizationState, normalize_depth, normalize_rgb
from naima.gta import zero_residual_
from naima.resample import bicubic_upsample

cfg = ModelConfig(scale=8, channels=16, rcab_per_level=1, rgb_blocks_per_level=1, reduction=4, head_rcabs=1)
sample = generate_synthetic_dataset(1, (112, 112), 8, seed=1)[0]
state = NormalizationState.from_depth(sample.depth_lr)
rgb = torch.as_tensor(normalize_rgb(sample.rgb, state))[None]
lr = torch.as_tensor(normalize_depth(sample.depth_lr, state))[None, None]

model = build_model(cfg, seed=0).double()
n = sum(p.numel() for p in model.trainable_parameters())
print(f"trainable parameters: {n:,}")

with torch.no_grad():
    a = naima_forward(model, rgb, lr)
    b = naima_plus_forward(model, rgb, lr)
    # alpha starts at 0, but the additive variant adds F ungated
    print("random init, attention output == additive output:", torch.equal(a, b))
    for att in model.attention:
        att.alpha.fill_(0.5)
    print("alpha = 0.5, max |attention - additive|:", (naima_forward(model, rgb, lr) - naima_plus_forward(model, rgb, lr)).abs().max().item())

    zero_residual_(model)
    out = naima_forward(model, rgb, lr)
    print("zeroed residuals == bicubic upsample, bit for bit:", torch.equal(out, bicubic_upsample(lr, 8)))
    feats = model.features(rgb, lr)
    print("every refined level equals the stem:", all(torch.equal(d, feats.d0) for d in feats.d))
