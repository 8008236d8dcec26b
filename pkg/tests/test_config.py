import pytest

from naima.config import (
    LossConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    default_patch_size,
    load_config_file,
    parse_config_text,
)
from naima.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert cfg.model.channels == 64 and cfg.model.token_layers == (3, 6, 9, 12)
    assert cfg.train.lr0 == 1e-4 and cfg.train.decay_factor == 0.3 and cfg.train.decay_every == 50
    assert cfg.train.epochs == 200 and cfg.train.batch_size == 1
    assert cfg.loss.lam == 0.05 and cfg.loss.kind == "l1_grad"
    assert cfg.model.key_dim == 64


def test_parse_text_with_comments():
    text = """
    # comment
    model.channels = 32   # trailing
    loss.lambda=0.1
    """
    assert parse_config_text(text) == {"model.channels": "32", "loss.lambda": "0.1"}


def test_parse_rejects_garbage():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("model.channels 32")


def test_overrides_coerce_types():
    cfg = RunConfig.from_overrides({
        "model.channels": "32", "model.attention.d_k": "16", "model.attention.raw_qkv": "false",
        "semantic_encoder.layers": "2,4,6,8", "train.patch_size": "none", "loss.lambda": "0",
        "model.scale": "8",
    })
    assert cfg.model.channels == 32 and cfg.model.d_k == 16 and cfg.model.key_dim == 16
    assert cfg.model.raw_qkv is False and cfg.model.token_layers == (2, 4, 6, 8)
    assert cfg.train.patch_size is None and cfg.loss.lam == 0.0
    assert cfg.train.scale == 8


def test_layering_keeps_base():
    base = RunConfig.from_overrides({"model.channels": "32", "train.epochs": "5"})
    cfg = RunConfig.from_overrides({"train.epochs": "7"}, base)
    assert cfg.model.channels == 32 and cfg.train.epochs == 7


@pytest.mark.parametrize("pairs", [
    {"model.nope": "1"},
    {"model.channels": "lots"},
    {"model.attention.raw_qkv": "maybe"},
    {"model.variant": "other"},
    {"model.channels": "30"},
    {"loss.kind": "ssim"},
    {"train.lr0": "-1"},
    {"semantic_encoder.layers": "1,2,3"},
    {"model.attention.raw_qkv": "true", "model.attention.d_k": "8"},
])
def test_bad_overrides(pairs):
    with pytest.raises(ConfigError):
        RunConfig.from_overrides(pairs)


def test_dump_round_trip(tmp_path):
    cfg = RunConfig.from_overrides({"model.channels": "32", "model.variant": "naima_plus",
                                    "loss.kind": "l1", "run.data": "/x/y"})
    cfg.write(tmp_path / "c.txt")
    back = RunConfig.from_overrides(load_config_file(tmp_path / "c.txt"))
    assert back == cfg
    assert "run.data = /x/y" in cfg.dumps()


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config_file("/nonexistent/config.txt")


def test_effective_lambda():
    assert LossConfig(kind="l1", lam=0.5).effective_lambda == 0.0
    assert LossConfig(lam=0.5).effective_lambda == 0.5


def test_patch_defaults():
    assert default_patch_size(4) == 420 and default_patch_size(8) == 448 and default_patch_size(16) == 448
    assert default_patch_size(4) % 14 == 0 and default_patch_size(16) % 16 == 0


def test_model_config_invariants():
    with pytest.raises(ConfigError):
        ModelConfig(n_levels=3)
    with pytest.raises(ConfigError):
        ModelConfig(provider="clip")
    with pytest.raises(ConfigError):
        ModelConfig(scale=1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
