"""Inference protocol (pad to a multiple of 14, infer, crop) and RMSE scoring in cm."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, ImageDraw, ImageFont
from PIL.PngImagePlugin import PngInfo

from .data import (
    NormalizationState,
    SamplePair,
    denormalize_depth,
    normalize_depth,
    normalize_rgb,
)
from .errors import InvalidInputError, NaimaError
from .resample import bicubic_upsample
from .tokens import PATCH


def pad_to_multiple(rgb, d_lr=None, multiple: int = PATCH, scale: int = 1):
    """Zero-pad bottom/right so HR dims become multiples of ``lcm(multiple, scale)``.

    ``rgb`` is (..., H, W); ``d_lr`` (optional) is (..., H/scale, W/scale).
    Returns ``(rgb_padded, d_lr_padded, (pad_h, pad_w))`` in HR pixels.
    """
    if multiple < 1 or scale < 1:
        raise InvalidInputError("multiple and scale must be >= 1")
    m = math.lcm(multiple, scale)
    H, W = rgb.shape[-2:]
    pad_h, pad_w = -H % m, -W % m
    rgb_p = _pad(rgb, pad_h, pad_w)
    d_p = None
    if d_lr is not None:
        if H % scale or W % scale or tuple(d_lr.shape[-2:]) != (H // scale, W // scale):
            raise InvalidInputError(f"LR map {tuple(d_lr.shape[-2:])} does not tile {H}x{W} at scale {scale}")
        d_p = _pad(d_lr, pad_h // scale, pad_w // scale)
    return rgb_p, d_p, (pad_h, pad_w)


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    if isinstance(x, torch.Tensor):
        return F.pad(x, (0, pw, 0, ph))
    widths = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, widths)


def crop_back(x, hw):
    return x[..., : hw[0], : hw[1]]


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def rmse_cm(pred, gt) -> float:
    """Root mean squared error of two metre-valued maps, in centimetres."""
    pred, gt = _np(pred), _np(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return 100.0 * math.sqrt(np.mean((pred - gt) ** 2))


@dataclass
class EvalReport:
    per_sample: list[tuple[str, float]]
    aggregate_rmse_cm: float
    scale: int
    protocol: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores, scale, pads=None):
        if not scores:
            raise InvalidInputError("cannot build a report from zero samples")
        pads = pads or {}
        agg = float(np.mean([v for _, v in scores]))
        protocol = {"padded": any(p != (0, 0) for p in pads.values()), "pad_amounts": dict(pads)}
        return cls(list(scores), agg, scale, protocol)

    def summary_line(self) -> str:
        return (f"samples={len(self.per_sample)} scale={self.scale} "
                f"aggregate_rmse_cm={self.aggregate_rmse_cm:.6f} padded={self.protocol.get('padded', False)}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "rmse_cm"])
            for sid, v in self.per_sample:
                w.writerow([sid, repr(float(v))])


def _model_dtype(model):
    return next(model.parameters()).dtype


def prepare_inputs(model, sample: SamplePair, scale: int):
    """Normalize with LR statistics and pad; returns tensors, state and pad record."""
    state = NormalizationState.from_depth(sample.depth_lr)
    rgb = normalize_rgb(sample.rgb, state)
    lr = normalize_depth(sample.depth_lr, state)
    rgb, lr, pads = pad_to_multiple(rgb, lr, PATCH, scale)
    dtype = _model_dtype(model)
    rgb_t = torch.as_tensor(np.ascontiguousarray(rgb), dtype=dtype)[None]
    lr_t = torch.as_tensor(np.ascontiguousarray(lr), dtype=dtype)[None, None]
    return rgb_t, lr_t, state, pads


@torch.no_grad()
def predict(model, sample: SamplePair, scale: int | None = None, variant=None):
    """HR depth prediction in metres, cropped to the sample's original size."""
    scale = scale or model.config.scale
    rgb, lr, state, pads = prepare_inputs(model, sample, scale)
    out = model(rgb, lr, scale, variant=variant)[0, 0]
    out = crop_back(out, sample.hr_shape)
    return denormalize_depth(_np(out), state), pads


def _check_scale(model, dataset, scale):
    scale = scale or model.config.scale
    if scale != model.config.scale:
        raise InvalidInputError(f"model trained for x{model.config.scale}, asked to evaluate x{scale}")
    for s in dataset:
        if s.scale != scale:
            raise InvalidInputError(f"sample {s.id!r} has scale {s.scale}, model expects {scale}")
    return scale


def evaluate(model, dataset, scale: int | None = None, variant=None, error_map_dir=None) -> EvalReport:
    """Score every sample; per-sample results are kept in dataset order."""
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("evaluation dataset is empty")
    scale = _check_scale(model, dataset, scale)
    was_training = model.training
    model.eval()
    scores, pads = [], {}
    try:
        for s in dataset:
            try:
                pred, pad = predict(model, s, scale, variant)
                scores.append((s.id, rmse_cm(pred, s.depth_gt)))
            except NaimaError as exc:
                raise type(exc)(f"sample {s.id!r}: {exc}") from exc
            pads[s.id] = pad
            if error_map_dir is not None:
                Path(error_map_dir).mkdir(parents=True, exist_ok=True)
                emit_error_map(pred, s.depth_gt, Path(error_map_dir) / f"{s.id}_error.png")
    finally:
        model.train(was_training)
    return EvalReport.from_scores(scores, scale, pads)


def bicubic_report(dataset) -> EvalReport:
    """Baseline: bicubic-upsampled LR depth scored against GT."""
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("evaluation dataset is empty")
    scores = [(s.id, rmse_cm(bicubic_upsample(s.depth_lr, s.scale), s.depth_gt)) for s in dataset]
    return EvalReport.from_scores(scores, dataset[0].scale)


# ---------------------------------------------------------------------------
# figures

_FOOTER = 14


def _ramp(name="inferno") -> np.ndarray:
    from matplotlib import colormaps

    return (colormaps[name](np.linspace(0.0, 1.0, 256))[:, :3] * 255).round().astype(np.uint8)


def _upscale(img: np.ndarray, min_width: int = 160) -> np.ndarray:
    k = max(1, math.ceil(min_width / img.shape[1]))
    return img.repeat(k, axis=0).repeat(k, axis=1)


def _save_png(arr: np.ndarray, path, text: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    info = PngInfo()
    for k, v in (text or {}).items():
        info.add_text(k, v)
    Image.fromarray(arr).save(path, pnginfo=info)
    return path


def error_map_pixels(pred, gt, vmax: float | None = None) -> np.ndarray:
    """|pred - gt| through the fixed colour ramp; 0 maps to the lowest colour."""
    err = np.abs(_np(pred) - _np(gt))
    top = float(err.max()) if vmax is None else float(vmax)
    idx = np.zeros(err.shape, dtype=np.int64) if top <= 0 else np.clip(err / top * 255, 0, 255).round().astype(np.int64)
    return _ramp()[idx]


def emit_error_map(pred, gt, path, vmax: float | None = None) -> Path:
    """Write the error map with an RMSE footer; the value also goes in a ``rmse_cm`` PNG text chunk."""
    pred, gt = _np(pred), _np(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    value = rmse_cm(pred, gt)
    label = f"{value:.2f}"
    body = _upscale(error_map_pixels(pred, gt, vmax))
    canvas = Image.new("RGB", (body.shape[1], body.shape[0] + _FOOTER), (255, 255, 255))
    canvas.paste(Image.fromarray(body), (0, 0))
    ImageDraw.Draw(canvas).text((2, body.shape[0] + 1), f"RMSE {label} cm", fill=(0, 0, 0),
                                font=ImageFont.load_default())
    return _save_png(np.asarray(canvas), path, {"rmse_cm": label})


def _gray(feature: torch.Tensor) -> np.ndarray:
    m = _np(feature[0].mean(dim=0))
    lo, hi = m.min(), m.max()
    m = np.zeros_like(m) if hi <= lo else (m - lo) / (hi - lo)
    return (m * 255).round().astype(np.uint8)


@torch.no_grad()
def emit_feature_maps(model, sample: SamplePair, path_prefix, scale: int | None = None) -> list[Path]:
    """Channel-mean images of the RGB taps R*_i and refined depth D_i, one file per level per row."""
    scale = scale or model.config.scale
    rgb, lr, _, _ = prepare_inputs(model, sample, scale)
    feats = model.features(rgb, lr, scale)
    hw = sample.hr_shape
    paths = []
    for row, maps in (("rgb", feats.r_star), ("depth", feats.d)):
        for i, m in enumerate(maps, 1):
            img = _gray(crop_back(m, hw))
            paths.append(_save_png(img, f"{path_prefix}_{row}_level{i}.png"))
    return paths
