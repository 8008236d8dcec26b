"""``naima`` command line: synth, train, eval and viz.

Settings are layered as defaults <- config file (``--config`` or the
``NAIMA_CONFIG`` environment variable) <- explicit flags and ``--set key=value``.
Every command writes the resolved settings to ``config.txt`` in its output
directory.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

from .config import LossConfig, ModelConfig, RunConfig, TrainConfig, load_config_file
from .data import (
    dataset_scale,
    generate_synthetic_dataset,
    list_ids,
    load_dataset,
    read_sample,
    write_dataset,
)
from .errors import ConfigError, InvalidInputError, NaimaError
from .evaluate import bicubic_report, emit_error_map, emit_feature_maps, evaluate, predict
from .gta import build_model
from .train import (
    load_checkpoint,
    model_config_from,
    restore,
    save_checkpoint,
    snapshot,
    train,
    write_loss_csv,
)

log = logging.getLogger("naima")

CONFIG_ENV = "NAIMA_CONFIG"
CONFIG_NAME = "config.txt"
CHECKPOINT_NAME = "checkpoint.ckpt"


class UsageError(Exception):
    """Bad flags, missing inputs or invalid settings (exit code 2)."""


# ---------------------------------------------------------------------------
# helpers


def _parse_sets(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _dims(text: str) -> tuple[int, int]:
    try:
        if "x" in text.lower():
            h, w = text.lower().split("x")
            return int(h), int(w)
        n = int(text)
        return n, n
    except ValueError:
        raise UsageError(f"--size must be N or HxW, got {text!r}") from None


def resolve_config(args, flag_overrides: dict) -> tuple[RunConfig, set]:
    """defaults <- config file <- flags <- ``--set``; also returns the keys set explicitly."""
    layered: dict[str, str] = {}
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        layered.update(load_config_file(path))
        layered["run.config_file"] = str(path)
    layered.update({k: v for k, v in flag_overrides.items() if v is not None})
    layered.update(_parse_sets(getattr(args, "set", None)))
    return RunConfig.from_overrides(layered), set(layered)


def _split_dir(data, split: str) -> Path:
    """``data`` may be a split directory itself or a root holding ``split/``."""
    root = Path(data)
    if not root.is_dir():
        raise UsageError(f"data directory not found: {root}")
    if list_ids(root):
        return root
    d = root / split
    if not d.is_dir():
        raise UsageError(f"split {split!r} not found under {root}")
    if not list_ids(d):
        raise UsageError(f"no samples in {d}")
    return d


def _load(directory: Path, scale: int | None = None):
    return load_dataset(directory.parent, directory.name, scale)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_config(ckpt, extra: dict) -> RunConfig:
    return RunConfig(
        model=ModelConfig(**ckpt.model_config),
        train=TrainConfig(**ckpt.train_config) if ckpt.train_config else TrainConfig(),
        loss=LossConfig(**ckpt.loss_config) if ckpt.loss_config else LossConfig(),
        run=extra,
    )


def _state_dtype(state: dict) -> torch.dtype:
    for v in state.values():
        if torch.is_floating_point(v):
            return v.dtype
    return torch.float32


def _model_from_checkpoint(path, weights=None):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    overrides = {"weights_path": weights} if weights else {}
    config = model_config_from(ckpt, **overrides)
    model = build_model(config).to(_state_dtype(ckpt.model_state))
    restore(ckpt, model)
    model.eval()
    return ckpt, model


def _check_data_scale(directory: Path, scale: int) -> None:
    found = dataset_scale(directory)
    if found is not None and found != scale:
        raise InvalidInputError(f"checkpoint was trained for x{scale} but {directory} holds x{found} samples")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    size = _dims(args.size)
    try:
        samples = generate_synthetic_dataset(args.count, size, args.scale, args.seed)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    split = write_dataset(samples, out, args.split, raw=not args.no_raw)
    cfg = RunConfig.from_overrides({
        "model.scale": str(args.scale), "run.command": "synth", "run.count": str(args.count),
        "run.size": f"{size[0]}x{size[1]}", "run.seed": str(args.seed), "run.split": args.split,
        "run.out": str(out),
    })
    cfg.write(out / CONFIG_NAME)
    print(f"wrote {len(samples)} samples ({size[0]}x{size[1]}, x{args.scale}, seed {args.seed}) to {split}")
    for s in samples:
        print(f"  {s.id}")
    return 0


def cmd_train(args) -> int:
    flags = {
        "model.scale": args.scale, "model.variant": args.variant, "model.channels": args.channels,
        "loss.kind": args.loss, "train.epochs": args.epochs, "train.lr0": args.lr,
        "train.seed": args.seed, "train.patch_size": args.patch_size,
    }
    cfg, explicit = resolve_config(args, {k: None if v is None else str(v) for k, v in flags.items()})
    directory = _split_dir(args.data, args.split)
    found = dataset_scale(directory)
    if "model.scale" not in explicit and found is not None and found != cfg.model.scale:
        # scale not given anywhere: take it from the data
        cfg = RunConfig.from_overrides({"model.scale": str(found)}, cfg)
    dataset = _load(directory)
    val = None
    if args.val_split:
        val = _load(_split_dir(args.data, args.val_split))

    out = _out_dir(args.out)
    cfg = RunConfig.from_overrides({"run.command": "train", "run.data": str(directory),
                                    "run.out": str(out), "run.dtype": args.dtype}, cfg)
    cfg.write(out / CONFIG_NAME)

    dtype = torch.float64 if args.dtype == "float64" else torch.float32
    model = build_model(cfg.model, seed=cfg.train.seed).to(dtype)

    def on_epoch_end(epoch, model, optimizer, history):
        if args.save_every and (epoch + 1) % args.save_every == 0:
            ck = snapshot(model, optimizer, cfg.train, cfg.loss, history, epoch=epoch + 1)
            save_checkpoint(ck, out / f"checkpoint_epoch{epoch + 1:04d}.ckpt")
        print(f"epoch {epoch + 1}/{cfg.train.epochs} loss {history[-1]['mean_loss']:.6g} "
              f"lr {history[-1]['lr']:.3g}", flush=True)

    ckpt = train(model, dataset, cfg.train, cfg.loss, val_dataset=val, on_epoch_end=on_epoch_end)
    save_checkpoint(ckpt, out / CHECKPOINT_NAME)
    write_loss_csv(ckpt.history, out / "loss.csv")
    print(f"variant={cfg.model.variant} loss={cfg.loss.kind} epochs={cfg.train.epochs} "
          f"checkpoint={out / CHECKPOINT_NAME}")
    return 0


def cmd_eval(args) -> int:
    ckpt, model = _model_from_checkpoint(args.checkpoint, args.weights)
    directory = _split_dir(args.data, args.split)
    scale = model.config.scale
    _check_data_scale(directory, scale)
    dataset = _load(directory, scale)

    out = _out_dir(args.out)
    _checkpoint_config(ckpt, {"command": "eval", "checkpoint": str(args.checkpoint),
                              "data": str(directory), "out": str(out)}).write(out / CONFIG_NAME)
    maps = out / "error_maps" if args.error_maps else None
    report = evaluate(model, dataset, scale, error_map_dir=maps)
    report.write_csv(out / "report.csv")
    lines = [f"variant={ckpt.variant} " + report.summary_line()]
    if args.baseline:
        base = bicubic_report(dataset)
        base.write_csv(out / "baseline.csv")
        lines.append("bicubic " + base.summary_line())
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_viz(args) -> int:
    ckpt, model = _model_from_checkpoint(args.checkpoint, args.weights)
    directory = _split_dir(args.data, args.split)
    if args.sample not in list_ids(directory):
        raise UsageError(f"sample {args.sample!r} not found in {directory}")
    scale = model.config.scale
    _check_data_scale(directory, scale)
    sample = read_sample(directory, args.sample, scale)

    out = _out_dir(args.out)
    _checkpoint_config(ckpt, {"command": "viz", "checkpoint": str(args.checkpoint),
                              "data": str(directory), "sample": args.sample,
                              "out": str(out)}).write(out / CONFIG_NAME)
    paths = emit_feature_maps(model, sample, out / args.sample, scale)
    pred, _ = predict(model, sample, scale)
    paths.append(emit_error_map(pred, sample.depth_gt, out / f"{args.sample}_error.png"))
    for p in paths:
        print(p)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="naima", description="Token-guided depth super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a procedural RGB-D dataset")
    s.add_argument("--count", type=int, required=True, help="number of samples")
    s.add_argument("--size", required=True, help="HR size N or HxW (multiples of 14 and of scale)")
    s.add_argument("--scale", type=int, default=4, help="downsampling factor (default 4)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="dataset root")
    s.add_argument("--split", default="train", help="split subdirectory (default train)")
    s.add_argument("--no-raw", action="store_true", help="skip the float32 depth side-car files")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help=f"key = value config file (fallback: ${CONFIG_ENV})")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.add_argument("--data", required=True, help="dataset root or split directory")
    t.add_argument("--split", default="train")
    t.add_argument("--val-split", help="held-out split scored every train.val_every epochs")
    t.add_argument("--scale", type=int)
    t.add_argument("--variant", choices=("naima", "naima_plus"))
    t.add_argument("--loss", choices=("l1_grad", "l1"))
    t.add_argument("--channels", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float, help="initial learning rate")
    t.add_argument("--seed", type=int)
    t.add_argument("--patch-size", type=int, help="HR crop edge; omit to train on whole samples")
    t.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    t.add_argument("--save-every", type=int, default=0, help="also checkpoint every N epochs")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--weights", help="override the semantic encoder weights path")
    e.add_argument("--error-maps", action="store_true", help="write one error map per sample")
    e.add_argument("--baseline", action="store_true", help="also write the bicubic baseline report")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="feature and error maps for one sample")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--split", default="test")
    v.add_argument("--sample", required=True, help="sample id")
    v.add_argument("--weights", help="override the semantic encoder weights path")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"naima {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (NaimaError, OSError, RuntimeError, ValueError) as exc:
        print(f"naima {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
