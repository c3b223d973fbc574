"""Training configuration and JSON config-file loading."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field

from .agcs import CROP_MENU, GRID, INPUT_SIZE
from .backbone import BackboneConfig
from .errors import ConfigError, IoError
from .head import HeadConfig

LOSSES = ("mae", "mse")
MASK_MODES = ("diff", "random")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    decay: float = 0.5
    decay_every: int = 20
    batch: int = 16
    epochs: int = 50
    loss: str = "mae"
    seed: int = 0
    input_size: int = INPUT_SIZE
    grid: int = GRID
    crop_menu: list[int] = field(default_factory=lambda: list(CROP_MENU))
    use_agcs: bool = True
    use_mg: bool = True
    use_fmm: bool = True
    mask_mode: str = "diff"
    mask_ratio: float = 0.25
    score_min: float | None = None
    score_max: float | None = None
    higher_is_better: bool = True
    tta: int = 8
    calibrate: int = 64  # samples for the data-dependent head init; 0 disables it

    def validate(self) -> None:
        if not self.lr >= 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.batch < 1 or self.epochs < 0 or self.decay_every < 1 or self.tta < 1:
            raise ConfigError("batch, decay_every and tta must be >= 1; epochs >= 0")
        if self.calibrate < 0:
            raise ConfigError("calibrate must be >= 0")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if self.input_size % self.grid or self.grid % 2:
            raise ConfigError(f"input_size {self.input_size} must be a multiple of the even grid {self.grid}")
        menu = [c for c in self.crop_menu if c >= self.input_size]
        if not menu or any(c % self.grid for c in self.crop_menu):
            raise ConfigError("crop_menu needs sizes >= input_size that are multiples of grid")
        if self.score_min is not None and self.score_max is not None and not self.score_max > self.score_min:
            raise ConfigError("score_max must exceed score_min")

    def to_dict(self) -> dict:
        return asdict(self)


SECTIONS = {"backbone": BackboneConfig, "head": HeadConfig, "train": TrainConfig}


def build(cls, values: dict):
    """Instantiate a config dataclass, rejecting keys it does not define."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**values)


def load_config(path=None) -> tuple[BackboneConfig, HeadConfig, TrainConfig]:
    """Read ``{"backbone": {...}, "head": {...}, "train": {...}}``; every section optional."""
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    try:
        cfgs = tuple(build(cls, data.get(name, {})) for name, cls in SECTIONS.items())
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    for c in cfgs:
        c.validate()
    return cfgs
