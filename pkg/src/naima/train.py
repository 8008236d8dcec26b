"""Adam training loop with step learning-rate decay, and the checkpoint container.

Checkpoint layout (little-endian)::

    0   8  magic  b"NAIMACKP"
    8   4  uint32 format version
    12  4  uint32 header length L
    16  L  UTF-8 JSON header (epoch, configs, variant, loss history)
    16+L 8 uint64 payload length P
    24+L 4 uint32 CRC-32 of payload
    28+L P torch-serialized {"model": state_dict, "optimizer": state_dict}
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import LossConfig, ModelConfig, TrainConfig
from .data import NormalizationState, crop_training_patch, normalize_sample
from .errors import CheckpointError, ConfigError, InvalidInputError, TrainingDivergedError
from .evaluate import evaluate
from .losses import total_loss

log = logging.getLogger(__name__)

MAGIC = b"NAIMACKP"
VERSION = 1


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """``lr0 * decay_factor ** (epoch // decay_every)``."""
    if epoch < 0:
        raise InvalidInputError("epoch must be >= 0")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


@dataclass
class Checkpoint:
    model_state: dict
    optimizer_state: dict | None
    epoch: int
    model_config: dict
    train_config: dict = field(default_factory=dict)
    loss_config: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)

    @property
    def variant(self) -> str:
        return self.model_config.get("variant", "naima")


def _to_tensors(batch, dtype):
    rgb = torch.as_tensor(np.stack([s.rgb for s in batch]), dtype=dtype)
    gt = torch.as_tensor(np.stack([s.depth_gt for s in batch]), dtype=dtype)[:, None]
    lr = torch.as_tensor(np.stack([s.depth_lr for s in batch]), dtype=dtype)[:, None]
    return rgb, lr, gt


def make_optimizer(model, config: TrainConfig):
    return torch.optim.Adam(model.trainable_parameters(), lr=lr_schedule(0, config),
                            betas=config.betas, eps=config.eps)


def train(model, dataset, config: TrainConfig, loss_config: LossConfig | None = None,
          val_dataset=None, optimizer=None, start_epoch: int = 0, on_epoch_end=None) -> Checkpoint:
    """Train in place and return the final checkpoint (its ``history`` holds one row per epoch).

    Each epoch visits the samples in a seeded random order, optionally takes a
    fresh seeded crop of each, normalizes depth with the GT min/max and takes
    one Adam step per batch. ``on_epoch_end(epoch, model, optimizer, history)``
    is called after every epoch.
    """
    loss_config = loss_config or LossConfig()
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("training dataset is empty")
    if config.scale != model.config.scale:
        raise ConfigError(f"train scale {config.scale} != model scale {model.config.scale}")
    for s in dataset:
        if s.scale != config.scale:
            raise InvalidInputError(f"sample {s.id!r} has scale {s.scale}, training x{config.scale}")

    dtype = next(model.parameters()).dtype
    optimizer = optimizer or make_optimizer(model, config)
    history: list[dict] = []
    torch.manual_seed(config.seed)
    model.train()
    for epoch in range(start_epoch, config.epochs):
        lr = lr_schedule(epoch, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = []
            for j in order[start : start + config.batch_size]:
                s = dataset[j]
                if config.patch_size:
                    s = crop_training_patch(s, config.patch_size, int(rng.integers(2**31)))
                batch.append(normalize_sample(s, NormalizationState.from_depth(s.depth_gt)))
            rgb, lr_t, gt = _to_tensors(batch, dtype)
            pred = model(rgb, lr_t, config.scale)
            loss = total_loss(pred, gt, loss_config)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, ",".join(b.id for b in batch), value)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            losses.append(value)
        row = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr": lr}
        if val_dataset and config.val_every and (epoch + 1) % config.val_every == 0:
            row["val_rmse_cm"] = evaluate(model, val_dataset, config.scale).aggregate_rmse_cm
            model.train()
        history.append(row)
        log.info("epoch %d loss %.6g lr %.3g", epoch, row["mean_loss"], lr)
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, optimizer, history)
            model.train()
    model.eval()
    return snapshot(model, optimizer, config, loss_config, history, epoch=max(config.epochs, start_epoch))


def snapshot(model, optimizer, train_config: TrainConfig, loss_config: LossConfig,
             history, epoch: int = 0) -> Checkpoint:
    return Checkpoint(
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=optimizer.state_dict() if optimizer is not None else None,
        epoch=epoch,
        model_config=dataclasses.asdict(model.config),
        train_config=dataclasses.asdict(train_config),
        loss_config=dataclasses.asdict(loss_config),
        history=list(history),
    )


# ---------------------------------------------------------------------------
# checkpoint container

_HEAD = struct.Struct("<8sII")
_PAYLOAD = struct.Struct("<QI")


def _atomic_write(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    header = json.dumps({
        "epoch": ckpt.epoch,
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "loss_config": ckpt.loss_config,
        "history": ckpt.history,
    }, sort_keys=True).encode()
    buf = io.BytesIO()
    torch.save({"model": ckpt.model_state, "optimizer": ckpt.optimizer_state}, buf)
    payload = buf.getvalue()
    blob = (_HEAD.pack(MAGIC, VERSION, len(header)) + header
            + _PAYLOAD.pack(len(payload), zlib.crc32(payload)) + payload)
    path = Path(path)
    _atomic_write(path, blob)
    return path


def _tuplify(cfg: dict, cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in cfg:
            v = cfg[f.name]
            out[f.name] = tuple(v) if isinstance(v, list) else v
    return out


def load_checkpoint(path, expect: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expect``, refuse one whose architecture differs."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEAD.size:
        raise CheckpointError("file shorter than header", offset=len(blob))
    magic, version, hlen = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("bad magic", offset=0)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}", offset=8)
    hend = _HEAD.size + hlen
    if hend + _PAYLOAD.size > len(blob):
        raise CheckpointError("header length runs past end of file", offset=12)
    try:
        header = json.loads(blob[_HEAD.size : hend])
    except ValueError as exc:
        raise CheckpointError(f"corrupt JSON header: {exc}", offset=_HEAD.size) from exc
    plen, crc = _PAYLOAD.unpack_from(blob, hend)
    start = hend + _PAYLOAD.size
    payload = blob[start : start + plen]
    if len(payload) != plen:
        raise CheckpointError(f"payload truncated: expected {plen} bytes, found {len(payload)}", offset=start)
    if zlib.crc32(payload) != crc:
        raise CheckpointError("payload checksum mismatch", offset=start)
    try:
        body = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot decode payload: {exc}", offset=start) from exc

    ckpt = Checkpoint(
        model_state=body["model"],
        optimizer_state=body["optimizer"],
        epoch=header["epoch"],
        model_config=_tuplify(header["model_config"], ModelConfig),
        train_config=_tuplify(header.get("train_config", {}), TrainConfig),
        loss_config=header.get("loss_config", {}),
        history=header.get("history", []),
    )
    if expect is not None:
        check_compatible(ckpt, expect)
    return ckpt


_ARCH_KEYS = ("channels", "rcab_per_level", "rgb_blocks_per_level", "reduction", "head_rcabs",
              "d_k", "raw_qkv", "shuffle_factor", "projection_kernel", "embed_dim", "n_levels")


def check_compatible(ckpt: Checkpoint, config: ModelConfig) -> None:
    mine = dataclasses.asdict(config)
    diffs = [f"{k}: checkpoint {ckpt.model_config.get(k)!r} vs model {mine[k]!r}"
             for k in _ARCH_KEYS if ckpt.model_config.get(k) != mine[k]]
    if diffs:
        raise ConfigError("checkpoint is incompatible with the model config: " + "; ".join(diffs))


def model_config_from(ckpt: Checkpoint, **overrides) -> ModelConfig:
    return ModelConfig(**{**ckpt.model_config, **overrides})


def restore(ckpt: Checkpoint, model) -> None:
    """Load checkpoint weights into ``model`` after an architecture check."""
    check_compatible(ckpt, model.config)
    model.load_state_dict(ckpt.model_state)


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "lr"])
        for row in history:
            w.writerow([row["epoch"], repr(float(row["mean_loss"])), repr(float(row["lr"]))])
