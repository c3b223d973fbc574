"""Backbone, feature masking and scoring head assembled into one network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .backbone import Backbone, BackboneConfig, init_params
from .config import TrainConfig
from .head import HeadConfig, ScoringHead, apply_fmm
from .rng import Rng


class MRNet(nn.Module):
    def __init__(self, backbone_cfg: BackboneConfig, head_cfg: HeadConfig, use_fmm: bool = True):
        super().__init__()
        self.backbone = Backbone(backbone_cfg)
        dims = [backbone_cfg.embed_dim * 2**k for k in range(4)]
        self.head = ScoringHead(dims, head_cfg)
        self.use_fmm = use_fmm

    @classmethod
    def create(cls, backbone_cfg: BackboneConfig, head_cfg: HeadConfig, use_fmm: bool = True) -> "MRNet":
        net = cls(backbone_cfg, head_cfg, use_fmm)
        init_params(net.backbone, Rng(backbone_cfg.seed))
        init_params(net.head, Rng(head_cfg.seed).spawn(1))
        return net

    def features(self, images: torch.Tensor, mask_a=None, mask_b=None) -> list[torch.Tensor]:
        feats = self.backbone(images)
        if self.use_fmm and mask_a is not None and mask_b is not None:
            feats[0], feats[1] = apply_fmm(feats[0], feats[1], mask_a, mask_b)
        return feats

    def forward(self, images: torch.Tensor, mask_a=None, mask_b=None) -> torch.Tensor:
        """Scores for images (B, 3, H, W) in [0, 1] with optional (B, h, w) masks."""
        return self.head(self.features(images, mask_a, mask_b))


def to_batch(images: list[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """Stack (H, W, 3) uint8 arrays into a (B, 3, H, W) tensor scaled to [0, 1]."""
    arr = np.stack(images).astype(np.float64) / 255.0
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous().to(dtype)


@dataclass
class QualityModel:
    """A network together with the configs and score bounds it was trained with."""

    net: MRNet
    backbone_cfg: BackboneConfig
    head_cfg: HeadConfig
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    score_min: float = 0.0
    score_max: float = 1.0
    weights_source: str = "init"

    @classmethod
    def create(cls, backbone_cfg: BackboneConfig, head_cfg: HeadConfig, train_cfg: TrainConfig | None = None):
        train_cfg = train_cfg or TrainConfig()
        net = MRNet.create(backbone_cfg, head_cfg, use_fmm=train_cfg.use_fmm)
        return cls(net, backbone_cfg, head_cfg, train_cfg)

    def normalize(self, scores) -> np.ndarray:
        """Map raw scores onto [0, 1], flipped when lower raw scores are better."""
        s = (np.asarray(scores, dtype=np.float64) - self.score_min) / (self.score_max - self.score_min)
        return s if self.train_cfg.higher_is_better else 1.0 - s
