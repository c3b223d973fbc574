import numpy as np
import pytest
import torch

from mriqa.backbone import BackboneConfig
from mriqa.config import TrainConfig
from mriqa.head import HeadConfig
from mriqa.imaging import Image

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


def record(criterion: str, passed: bool, detail: str = "") -> None:
    """Log an acceptance criterion outcome and fail the test if it did not pass."""
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {criterion}  {detail}".rstrip())
    assert passed, f"{criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def random_image(rng: np.random.Generator, w: int, h: int) -> Image:
    return Image(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def mini_backbone(**kw) -> BackboneConfig:
    base = dict(patch_size=4, embed_dim=8, depths=[1, 1, 1, 1], heads=[2, 2, 4, 4], window=4, input_size=32, seed=3)
    base.update(kw)
    return BackboneConfig(**base)


def mini_head(**kw) -> HeadConfig:
    base = dict(pool_size=2, mix_dim=8, hidden_dim=16, seed=5)
    base.update(kw)
    return HeadConfig(**base)


def mini_train(**kw) -> TrainConfig:
    base = dict(input_size=32, grid=8, crop_menu=[32, 40, 48, 56, 64], batch=4, epochs=2, seed=11)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(autouse=True)
def restore_torch_modes():
    """The CLI's --deterministic flag flips process-wide torch state; undo it."""
    yield
    torch.use_deterministic_algorithms(False)
    torch.set_num_threads(1)
