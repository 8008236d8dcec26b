# Overfit one small scene, compare against bicubic and the additive variant, then draw the figures.
import sys
import tempfile
import time
from pathlib import Path

from naima import ModelConfig, TrainConfig, bicubic_report, build_model, evaluate, generate_synthetic_dataset, train
from naima.evaluate import emit_error_map, emit_feature_maps, predict

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100
out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(tempfile.mkdtemp())

sample = generate_synthetic_dataset(1, (56, 56), 4, seed=0)[0]
print(f"bicubic: {bicubic_report([sample]).aggregate_rmse_cm:.2f} cm")

small = dict(scale=4, channels=16, rcab_per_level=1, rgb_blocks_per_level=1, reduction=4, head_rcabs=1)
models = {}
for variant in ("naima", "naima_plus"):
    t = time.time()
    model = build_model(ModelConfig(variant=variant, **small), seed=0)
    ckpt = train(model, [sample], TrainConfig(scale=4, epochs=epochs, lr0=1e-3, decay_factor=1.0))
    h = ckpt.history
    print(f"{variant:>10}: loss {h[0]['mean_loss']:.4f} -> {h[-1]['mean_loss']:.4f}, "
          f"RMSE {evaluate(model, [sample]).aggregate_rmse_cm:.2f} cm ({time.time() - t:.0f}s)")
    models[variant] = model

pred, _ = predict(models["naima"], sample)
print("error map:", emit_error_map(pred, sample.depth_gt, out / "error.png"))
for p in emit_feature_maps(models["naima"], sample, out / "features"):
    print("feature map:", p)
