"""RGB-D samples: normalization, cropping, synthetic scenes and on-disk I/O.

Dataset layout::

    <root>/<split>/<id>_rgb.png     8-bit RGB
    <root>/<split>/<id>_depth.png   16-bit depth, units of ``depth_scale_mm``
    <root>/<split>/<id>_meta        key=value text (depth_scale_mm, width, height, scale)
    <root>/<split>/<id>_depth.f32   optional lossless float32 grid (synthetic data)

The ``.f32`` grid has a 16-byte little-endian header: 4-byte magic ``NDF1``,
uint32 dtype code (1 = float32), uint32 height, uint32 width.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateRangeError, InvalidInputError
from .resample import bicubic_downsample

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
PATCH = 14

RAW_MAGIC = b"NDF1"
RAW_FLOAT32 = 1
_RAW_HEADER = struct.Struct("<4sIII")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SamplePair:
    """One RGB-D record. Arrays are float64 and read-only.

    ``rgb`` is 3xHxW, ``depth_gt`` HxW (meters), ``depth_lr`` (H/s)x(W/s).
    """

    rgb: np.ndarray
    depth_gt: np.ndarray
    depth_lr: np.ndarray
    scale: int
    id: str = ""

    def __post_init__(self):
        for name in ("rgb", "depth_gt", "depth_lr"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise InvalidInputError(f"rgb must be 3xHxW, got {self.rgb.shape}")
        H, W = self.rgb.shape[1:]
        if self.depth_gt.shape != (H, W):
            raise InvalidInputError(f"depth_gt {self.depth_gt.shape} does not match rgb {H}x{W}")
        s = self.scale
        if H % s or W % s or self.depth_lr.shape != (H // s, W // s):
            raise InvalidInputError(
                f"depth_lr {self.depth_lr.shape} inconsistent with {H}x{W} at scale {s}"
            )

    @property
    def hr_shape(self) -> tuple[int, int]:
        return self.depth_gt.shape


@dataclass(frozen=True)
class NormalizationState:
    depth_min: float
    depth_max: float
    rgb_mean: tuple[float, float, float] = IMAGENET_MEAN
    rgb_std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if not self.depth_max > self.depth_min:
            raise DegenerateRangeError(
                f"depth range is degenerate: min={self.depth_min}, max={self.depth_max}"
            )
        if min(self.rgb_std) <= 0:
            raise InvalidInputError("rgb_std components must be > 0")

    @classmethod
    def from_depth(cls, depth) -> "NormalizationState":
        """Min-max state from a depth map (GT at train time, LR at inference)."""
        return cls(float(np.min(depth)), float(np.max(depth)))

    @property
    def depth_range(self) -> float:
        return self.depth_max - self.depth_min


def normalize_depth(depth, state: NormalizationState):
    out = (depth - state.depth_min) / state.depth_range
    return out.clip(0.0, 1.0)


def denormalize_depth(depth, state: NormalizationState):
    return depth * state.depth_range + state.depth_min


def normalize_rgb(rgb, state: NormalizationState):
    mean = np.asarray(state.rgb_mean).reshape(3, 1, 1)
    std = np.asarray(state.rgb_std).reshape(3, 1, 1)
    return (rgb - mean) / std


def denormalize_rgb(rgb, state: NormalizationState):
    mean = np.asarray(state.rgb_mean).reshape(3, 1, 1)
    std = np.asarray(state.rgb_std).reshape(3, 1, 1)
    return rgb * std + mean


def normalize_sample(sample: SamplePair, state: NormalizationState) -> SamplePair:
    return replace(
        sample,
        rgb=normalize_rgb(sample.rgb, state),
        depth_gt=normalize_depth(sample.depth_gt, state),
        depth_lr=normalize_depth(sample.depth_lr, state),
    )


def denormalize_sample(sample: SamplePair, state: NormalizationState) -> SamplePair:
    return replace(
        sample,
        rgb=denormalize_rgb(sample.rgb, state),
        depth_gt=denormalize_depth(sample.depth_gt, state),
        depth_lr=denormalize_depth(sample.depth_lr, state),
    )


def crop_offsets(hr_shape, patch_size: int, scale: int, rng_seed: int) -> tuple[int, int]:
    H, W = hr_shape
    if patch_size % scale:
        raise InvalidInputError(f"patch size {patch_size} not divisible by scale {scale}")
    if H < patch_size or W < patch_size:
        raise InvalidInputError(f"source {H}x{W} is smaller than patch {patch_size}")
    rng = np.random.default_rng(rng_seed)
    oy = int(rng.integers(0, (H - patch_size) // scale + 1)) * scale
    ox = int(rng.integers(0, (W - patch_size) // scale + 1)) * scale
    return oy, ox


def crop_training_patch(sample: SamplePair, patch_size: int, rng_seed: int) -> SamplePair:
    """Random HR crop whose offset is a multiple of the scale, with the matching LR crop."""
    s = sample.scale
    oy, ox = crop_offsets(sample.hr_shape, patch_size, s, rng_seed)
    p, q = patch_size, patch_size // s
    return replace(
        sample,
        rgb=sample.rgb[:, oy : oy + p, ox : ox + p],
        depth_gt=sample.depth_gt[oy : oy + p, ox : ox + p],
        depth_lr=sample.depth_lr[oy // s : oy // s + q, ox // s : ox // s + q],
    )


# ---------------------------------------------------------------------------
# synthetic scenes


def _check_dims(dims, scale):
    H, W = dims
    if H <= 0 or W <= 0 or H % PATCH or W % PATCH or H % scale or W % scale:
        raise InvalidInputError(f"dims {H}x{W} must be positive and divisible by {PATCH} and by scale {scale}")


def _scene(rng: np.random.Generator, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    yy /= H
    xx /= W

    # background: slanted plane far away
    depth = rng.uniform(3.0, 5.0) + rng.uniform(-0.8, 0.8) * xx + rng.uniform(-0.8, 0.8) * yy
    albedo = np.ones((3, H, W)) * rng.uniform(0.2, 0.8, size=(3, 1, 1))

    for _ in range(int(rng.integers(2, 5))):
        d = rng.uniform(0.6, 2.8)
        color = rng.uniform(0.1, 0.9, size=3)
        if rng.random() < 0.3:
            # same colour as the background: a depth edge without an RGB edge
            color = albedo[:, 0, 0].copy()
        if rng.random() < 0.5:
            y0, x0 = rng.uniform(0.0, 0.7, size=2)
            h, w = rng.uniform(0.15, 0.5, size=2)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            cy, cx = rng.uniform(0.2, 0.8, size=2)
            r = rng.uniform(0.1, 0.3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        tilt = rng.uniform(-0.3, 0.3)
        depth = np.where(mask, d + tilt * (xx - 0.5), depth)
        albedo = np.where(mask[None], color.reshape(3, 1, 1), albedo)

    # texture that ignores depth boundaries: stripes and colour blobs
    freq = rng.uniform(4, 12)
    angle = rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy))
    texture = 0.15 * stripes * rng.uniform(-1, 1, size=(3, 1, 1))
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.1, 0.35)
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        texture = texture + 0.25 * blob[None] * rng.uniform(-1, 1, size=(3, 1, 1))

    shading = 1.0 / (1.0 + 0.15 * depth)
    rgb = albedo * shading[None] + texture + rng.normal(0.0, 0.02, size=(3, H, W))
    # quantize so the 8-bit / float32 on-disk forms are lossless
    rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0) / 255.0
    depth = depth.astype(np.float32).astype(np.float64)
    return rgb, depth


def make_sample(depth_gt, rgb, scale: int, id: str = "") -> SamplePair:
    """Build a sample whose LR depth is the bicubic shrink of ``depth_gt``."""
    return SamplePair(rgb=rgb, depth_gt=depth_gt, depth_lr=bicubic_downsample(np.asarray(depth_gt), scale),
                      scale=scale, id=id)


def generate_synthetic_dataset(count: int, dims, scale: int, seed: int) -> list[SamplePair]:
    """Procedural piecewise-planar scenes with depth-agnostic RGB texture.

    Sample ``i`` depends only on ``(dims, scale, seed, i)``, so a larger
    ``count`` extends a smaller one.
    """
    if count < 0:
        raise InvalidInputError("count must be >= 0")
    H, W = dims
    _check_dims(dims, scale)
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        rgb, depth = _scene(rng, H, W)
        out.append(make_sample(depth, rgb, scale, id=f"synth_{i:05d}"))
    return out


# ---------------------------------------------------------------------------
# I/O


def write_raw_grid(path, grid) -> None:
    grid = np.ascontiguousarray(grid, dtype="<f4")
    h, w = grid.shape
    Path(path).write_bytes(_RAW_HEADER.pack(RAW_MAGIC, RAW_FLOAT32, h, w) + grid.tobytes())


def read_raw_grid(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise InvalidInputError(f"{path}: truncated header")
    magic, code, h, w = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC or code != RAW_FLOAT32:
        raise InvalidInputError(f"{path}: bad magic or dtype code")
    body = blob[_RAW_HEADER.size :]
    if len(body) != 4 * h * w:
        raise InvalidInputError(f"{path}: expected {4 * h * w} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def _write_meta(path, meta: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def read_meta(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_sample(sample: SamplePair, directory, depth_scale_mm: float = 1.0, raw: bool = True) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rgb8 = np.round(np.clip(sample.rgb, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(rgb8, mode="RGB").save(d / f"{sample.id}_rgb.png")
    units = np.round(sample.depth_gt * 1000.0 / depth_scale_mm)
    if units.max() > 65535:
        raise InvalidInputError(f"{sample.id}: depth exceeds 16-bit range at {depth_scale_mm} mm/unit")
    Image.fromarray(units.astype(np.uint16)).save(d / f"{sample.id}_depth.png")
    H, W = sample.hr_shape
    _write_meta(d / f"{sample.id}_meta",
                {"depth_scale_mm": depth_scale_mm, "width": W, "height": H, "scale": sample.scale})
    if raw:
        write_raw_grid(d / f"{sample.id}_depth.f32", sample.depth_gt)


def write_dataset(samples, root, split: str = "train", **kwargs) -> Path:
    d = Path(root) / split
    for s in samples:
        write_sample(s, d, **kwargs)
    return d


def read_sample(directory, sample_id: str, scale: int | None = None) -> SamplePair:
    d = Path(directory)
    meta = read_meta(d / f"{sample_id}_meta")
    if scale is None:
        if "scale" not in meta:
            raise InvalidInputError(f"{sample_id}: no scale in metadata and none given")
        scale = int(meta["scale"])
    rgb = np.asarray(Image.open(d / f"{sample_id}_rgb.png").convert("RGB"), dtype=np.float64)
    rgb = rgb.transpose(2, 0, 1) / 255.0
    raw = d / f"{sample_id}_depth.f32"
    if raw.exists():
        depth = read_raw_grid(raw)
    else:
        units = np.asarray(Image.open(d / f"{sample_id}_depth.png"), dtype=np.float64)
        depth = units * float(meta.get("depth_scale_mm", 1.0)) / 1000.0
    H, W = int(meta.get("height", depth.shape[0])), int(meta.get("width", depth.shape[1]))
    if depth.shape != (H, W):
        raise InvalidInputError(f"{sample_id}: depth {depth.shape} disagrees with meta {H}x{W}")
    return make_sample(depth, rgb, scale, id=sample_id)


def list_ids(directory) -> list[str]:
    return sorted(p.name[: -len("_meta")] for p in Path(directory).glob("*_meta"))


def dataset_scale(directory) -> int | None:
    """Scale recorded in the sample metadata, if any (must be consistent)."""
    scales = {read_meta(Path(directory) / f"{i}_meta").get("scale") for i in list_ids(directory)}
    scales.discard(None)
    if len(scales) > 1:
        raise InvalidInputError(f"{directory}: mixed scales {sorted(scales)}")
    return int(scales.pop()) if scales else None


def load_dataset(root, split: str = "train", scale: int | None = None) -> list[SamplePair]:
    d = Path(root) / split
    if not d.is_dir():
        raise FileNotFoundError(f"dataset split not found: {d}")
    return [read_sample(d, i, scale) for i in list_ids(d)]
