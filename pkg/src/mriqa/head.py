"""Feature masking of the shallow stages and the quality-scoring head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionMismatch


@dataclass
class HeadConfig:
    pool_size: int = 8
    mix_dim: int = 64
    hidden_dim: int = 128
    terminal_sigmoid: bool = False
    standardize: bool = True
    momentum: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if min(self.pool_size, self.mix_dim, self.hidden_dim) <= 0:
            raise ConfigError("pool_size, mix_dim and hidden_dim must be positive")
        if not 0.0 < self.momentum <= 1.0:
            raise ConfigError(f"momentum must lie in (0, 1], got {self.momentum}")

    def to_dict(self) -> dict:
        return asdict(self)


def _keep(bits, batch: int, like: torch.Tensor) -> torch.Tensor:
    """Inverted mask as a (B, H, W, 1) multiplier."""
    m = torch.as_tensor(np.asarray(bits) if not isinstance(bits, torch.Tensor) else bits)
    if m.dim() == 2:
        m = m.unsqueeze(0).expand(batch, -1, -1)
    return (~m.bool()).to(like.dtype).unsqueeze(-1)


def apply_fmm(f1: torch.Tensor, f2: torch.Tensor, mask_a, mask_b) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero F1 where MaskB is set and F2 where MaskA is set.

    Features are ``(B, H, W, C)``; masks are ``(H, W)`` or ``(B, H, W)`` boolean
    arrays (or objects with a ``bits`` attribute).
    """
    bits_b = getattr(mask_b, "bits", mask_b)
    bits_a = getattr(mask_a, "bits", mask_a)
    if tuple(np.shape(bits_b)[-2:]) != tuple(f1.shape[1:3]):
        raise DimensionMismatch(f"MaskB {np.shape(bits_b)} does not match F1 grid {tuple(f1.shape[1:3])}")
    if tuple(np.shape(bits_a)[-2:]) != tuple(f2.shape[1:3]):
        raise DimensionMismatch(f"MaskA {np.shape(bits_a)} does not match F2 grid {tuple(f2.shape[1:3])}")
    return f1 * _keep(bits_b, f1.shape[0], f1), f2 * _keep(bits_a, f2.shape[0], f2)


class ScoringHead(nn.Module):
    """Pool each scale to a common grid, mix channels 1x1, concatenate, GAP, 2-layer MLP.

    With ``cfg.standardize`` the pooled vector is standardised per channel
    before the MLP: by the statistics of the current batch in training mode
    (batches of two or more), otherwise by the ``vec_mean``/``vec_std``
    buffers.  The buffers change only through :meth:`set_stats` and
    :meth:`track`, never inside ``forward``.
    """

    def __init__(self, in_dims: list[int], cfg: HeadConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.mix = nn.ModuleList(nn.Linear(d, cfg.mix_dim) for d in in_dims)
        self.fc1 = nn.Linear(cfg.mix_dim * len(in_dims), cfg.hidden_dim)
        self.fc2 = nn.Linear(cfg.hidden_dim, 1)
        width = cfg.mix_dim * len(in_dims)
        self.register_buffer("vec_mean", torch.zeros(width))
        self.register_buffer("vec_std", torch.ones(width))

    def pool(self, f: torch.Tensor) -> torch.Tensor:
        """(B, H, W, C) -> (B, pool, pool, C) by adaptive average pooling."""
        p = self.cfg.pool_size
        return F.adaptive_avg_pool2d(f.permute(0, 3, 1, 2), p).permute(0, 2, 3, 1)

    def pooled(self, feats: list[torch.Tensor]) -> torch.Tensor:
        """The (B, 4 * mix_dim) vector entering the MLP, before standardisation."""
        if len(feats) != len(self.mix):
            raise DimensionMismatch(f"expected {len(self.mix)} feature maps, got {len(feats)}")
        mixed = []
        for f, mix in zip(feats, self.mix):
            if f.shape[-1] != mix.in_features:
                raise DimensionMismatch(f"feature channels {f.shape[-1]} != {mix.in_features}")
            mixed.append(mix(self.pool(f)))
        return torch.cat(mixed, dim=-1).mean(dim=(1, 2))

    @torch.no_grad()
    def set_stats(self, vec: torch.Tensor) -> None:
        self.vec_mean.copy_(vec.mean(0))
        self.vec_std.copy_(vec.std(0).clamp_min(1e-4) if len(vec) > 1 else torch.ones_like(self.vec_std))

    @torch.no_grad()
    def track(self, vec: torch.Tensor) -> None:
        """Exponential moving update of the standardisation buffers."""
        if len(vec) < 2:
            return
        m = self.cfg.momentum
        self.vec_mean.lerp_(vec.mean(0).to(self.vec_mean.dtype), m)
        self.vec_std.lerp_(vec.std(0).clamp_min(1e-4).to(self.vec_std.dtype), m)

    def mlp(self, vec: torch.Tensor) -> torch.Tensor:
        if self.cfg.standardize:
            if self.training and len(vec) > 1:
                vec = (vec - vec.mean(0)) / vec.std(0).clamp_min(1e-4)
            else:
                vec = (vec - self.vec_mean) / self.vec_std
        out = self.fc2(torch.sigmoid(self.fc1(vec))).squeeze(-1)
        return torch.sigmoid(out) if self.cfg.terminal_sigmoid else out

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        return self.mlp(self.pooled(feats))
