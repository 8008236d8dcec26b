"""Configuration objects and the flat ``key = value`` config-file format.

A run is configured by three dataclasses (:class:`ModelConfig`,
:class:`TrainConfig`, :class:`LossConfig`) plus a few path/data keys. On disk
and on the command line all of them share one flat namespace of dotted keys,
e.g. ``model.channels = 64`` or ``loss.lambda = 0.05``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

VALID_SCALES = (4, 8, 16)
DEFAULT_TOKEN_LAYERS = (3, 6, 9, 12)


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 4
    channels: int = 64
    rcab_per_level: int = 4
    rgb_blocks_per_level: int = 2
    reduction: int = 16
    head_rcabs: int = 2
    alpha_init: float = 0.0
    d_k: int | None = None  # None -> channels
    max_n: int = 16384
    raw_qkv: bool = False
    shuffle_factor: int = 2
    projection_kernel: int = 3
    variant: str = "naima"
    # semantic encoder
    provider: str = "stub"
    embed_dim: int = 384
    weights_path: str | None = None
    token_layers: tuple[int, ...] = DEFAULT_TOKEN_LAYERS
    stub_seed: int = 0
    n_levels: int = 4

    def __post_init__(self):
        if self.n_levels != 4:
            raise ConfigError("n_levels must be 4")
        if self.channels <= 0 or self.channels % self.reduction:
            raise ConfigError(
                f"channels ({self.channels}) must be positive and divisible by reduction ({self.reduction})"
            )
        if self.variant not in ("naima", "naima_plus"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.provider not in ("stub", "pretrained"):
            raise ConfigError(f"unknown semantic_encoder.kind {self.provider!r}")
        if len(self.token_layers) != 4:
            raise ConfigError("exactly four token layers are required")
        if self.raw_qkv and self.d_k not in (None, self.channels):
            raise ConfigError("raw_qkv requires d_k == channels")
        if self.scale < 2:
            raise ConfigError(f"scale must be >= 2, got {self.scale}")

    @property
    def key_dim(self) -> int:
        return self.channels if self.d_k is None else self.d_k


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    decay_factor: float = 0.3
    decay_every: int = 50
    epochs: int = 200
    batch_size: int = 1
    seed: int = 0
    scale: int = 4
    patch_size: int | None = None  # None -> train on whole samples
    val_every: int = 10
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError("lr0 must be > 0")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.decay_every < 1:
            raise ConfigError("batch_size and decay_every must be >= 1")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.05
    kind: str = "l1_grad"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("loss.lambda must be >= 0")
        if self.kind not in ("l1_grad", "l1"):
            raise ConfigError(f"unknown loss.kind {self.kind!r}")

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.kind == "l1" else self.lam


def default_patch_size(scale: int) -> int:
    """HR training patch edge used for the full-size protocol (420 at x4, 448 at x8/x16)."""
    return 420 if scale == 4 else 448


# dotted key -> (section, field name)
_KEYS: dict[str, tuple[str, str]] = {
    "model.scale": ("model", "scale"),
    "model.channels": ("model", "channels"),
    "model.rcab_per_level": ("model", "rcab_per_level"),
    "model.rgb_blocks_per_level": ("model", "rgb_blocks_per_level"),
    "model.reduction": ("model", "reduction"),
    "model.head_rcabs": ("model", "head_rcabs"),
    "model.alpha_init": ("model", "alpha_init"),
    "model.attention.d_k": ("model", "d_k"),
    "model.attention.max_n": ("model", "max_n"),
    "model.attention.raw_qkv": ("model", "raw_qkv"),
    "model.shuffle_factor": ("model", "shuffle_factor"),
    "model.projection_kernel": ("model", "projection_kernel"),
    "model.variant": ("model", "variant"),
    "semantic_encoder.kind": ("model", "provider"),
    "semantic_encoder.embed_dim": ("model", "embed_dim"),
    "semantic_encoder.weights_path": ("model", "weights_path"),
    "semantic_encoder.layers": ("model", "token_layers"),
    "semantic_encoder.seed": ("model", "stub_seed"),
    "train.lr0": ("train", "lr0"),
    "train.decay_factor": ("train", "decay_factor"),
    "train.decay_every": ("train", "decay_every"),
    "train.epochs": ("train", "epochs"),
    "train.batch_size": ("train", "batch_size"),
    "train.seed": ("train", "seed"),
    "train.patch_size": ("train", "patch_size"),
    "train.val_every": ("train", "val_every"),
    "loss.lambda": ("loss", "lam"),
    "loss.kind": ("loss", "kind"),
}
_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "loss": LossConfig}


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(value: str, default: Any, name: str) -> Any:
    text = value.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected boolean, got {value!r}")
    if isinstance(default, tuple):
        parts = [p for p in text.replace(" ", "").split(",") if p]
        conv = type(default[0]) if default else float
        try:
            return tuple(conv(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"{name}: bad list {value!r}") from exc
    if isinstance(default, int) or name.endswith(("d_k", "patch_size")):
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"{name}: expected integer, got {value!r}") from exc
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"{name}: expected number, got {value!r}") from exc
    return text


@dataclass
class RunConfig:
    """Fully resolved settings for one CLI run (defaults <- file <- flags)."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    # free-form ``run.*`` keys: data paths, command name, synth parameters
    run: dict = field(default_factory=dict)

    @classmethod
    def from_overrides(cls, overrides: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        sections = {name: dataclasses.asdict(getattr(base, name)) for name in _SECTIONS}
        run = dict(base.run)
        for key, raw in overrides.items():
            if key.startswith("run.") and len(key) > 4:
                run[key[4:]] = str(raw)
                continue
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            section, name = _KEYS[key]
            default = _field_types(_SECTIONS[section])[name].default
            current = sections[section][name]
            probe = current if current is not None else default
            sections[section][name] = raw if not isinstance(raw, str) else _coerce(raw, probe, key)
        # scale lives in both model and train; the model value wins
        sections["train"]["scale"] = sections["model"]["scale"]
        try:
            return cls(**{name: _SECTIONS[name](**vals) for name, vals in sections.items()}, run=run)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_flat(self) -> dict[str, Any]:
        out = {}
        for key, (section, name) in _KEYS.items():
            out[key] = getattr(getattr(self, section), name)
        for name, value in sorted(self.run.items()):
            out[f"run.{name}"] = value
        return out

    def dumps(self) -> str:
        lines = []
        for key, value in self.to_flat().items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path) -> dict[str, str]:
    try:
        return parse_config_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
