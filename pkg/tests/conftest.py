import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from naima import ModelConfig, build_model, generate_synthetic_dataset  # noqa: E402

TINY = dict(channels=8, rcab_per_level=1, rgb_blocks_per_level=1, reduction=4, head_rcabs=1, embed_dim=24)


def tiny_config(**overrides) -> ModelConfig:
    return ModelConfig(**{**TINY, **overrides})


def tiny_model(seed=0, dtype=torch.float64, **overrides):
    return build_model(tiny_config(**overrides), seed).to(dtype)


@pytest.fixture
def sample56():
    return generate_synthetic_dataset(1, (56, 56), 4, seed=3)[0]


@pytest.fixture
def f64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
