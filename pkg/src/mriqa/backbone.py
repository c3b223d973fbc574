"""Small hierarchical windowed-attention backbone.

Tokens are kept channels-last, ``(B, H, W, C)``.  Stage ``k`` emits ``F_k``
before the next patch merging, so a 256x256 input with patch size 4 yields
grids of 64, 32, 16 and 8 tokens with C, 2C, 4C and 8C channels.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, SizeError, StateError
from .rng import Rng


@dataclass
class BackboneConfig:
    patch_size: int = 4
    embed_dim: int = 24
    depths: list[int] = field(default_factory=lambda: [1, 1, 2, 1])
    heads: list[int] = field(default_factory=lambda: [2, 2, 4, 4])
    window: int = 8
    mlp_ratio: float = 4.0
    shifted: bool = True
    input_size: int = 256
    seed: int = 0

    def validate(self) -> None:
        if self.patch_size <= 0 or self.embed_dim <= 0 or self.window <= 0:
            raise ConfigError("patch_size, embed_dim and window must be positive")
        if len(self.depths) != 4 or len(self.heads) != 4:
            raise ConfigError("depths and heads need one entry per stage (4)")
        if any(d < 1 for d in self.depths) or any(h < 1 for h in self.heads):
            raise ConfigError("depths and heads must be positive")
        if self.input_size % (self.patch_size * 8):
            raise ConfigError(f"input_size {self.input_size} must be a multiple of 8*patch_size")
        grid = self.input_size // self.patch_size
        if grid % self.window:
            raise ConfigError(f"stage-1 token grid {grid} not divisible by window {self.window}")
        for k in range(4):
            dim = self.embed_dim * 2**k
            if dim % self.heads[k]:
                raise ConfigError(f"stage {k + 1}: channels {dim} not divisible by heads {self.heads[k]}")
            side = grid >> k
            if side % min(self.window, side):
                raise ConfigError(f"stage {k + 1}: grid {side} not divisible by window {self.window}")

    def to_dict(self) -> dict:
        return asdict(self)


def window_partition(x: torch.Tensor, w: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, w*w, C)."""
    b, h, wd, c = x.shape
    x = x.view(b, h // w, w, wd // w, w, c).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, w * w, c)


def window_reverse(windows: torch.Tensor, w: int, h: int, wd: int) -> torch.Tensor:
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // w) * (wd // w))
    x = windows.view(b, h // w, wd // w, w, w, c).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h, wd, c)


def relative_position_index(w: int) -> torch.Tensor:
    coords = torch.stack(torch.meshgrid(torch.arange(w), torch.arange(w), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (w - 1)
    return rel[..., 0] * (2 * w - 1) + rel[..., 1]


def shift_mask(h: int, wd: int, w: int, s: int) -> torch.Tensor:
    """Additive mask (nW, w*w, w*w) blocking attention across wrapped regions."""
    region = torch.zeros(h, wd)
    cnt = 0
    for hs in (slice(0, -w), slice(-w, -s), slice(-s, None)):
        for ws in (slice(0, -w), slice(-w, -s), slice(-s, None)):
            region[hs, ws] = cnt
            cnt += 1
    win = window_partition(region[None, :, :, None], w).squeeze(-1)
    diff = win[:, None, :] - win[:, :, None]
    return torch.where(diff != 0, -100.0, 0.0)


class WindowAttention(nn.Module):
    def __init__(self, dim: int, heads: int, window: int):
        super().__init__()
        self.heads = heads
        self.window = window
        self.scale = (dim // heads) ** -0.5
        self.rel_bias = nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))
        self.register_buffer("rel_index", relative_position_index(window), persistent=False)
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def attention(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Attention probabilities for windows ``x`` of shape (Bw, N, C)."""
        bw, n, c = x.shape
        q, k, _ = self.qkv(x).view(bw, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.rel_bias[self.rel_index.view(-1)].view(n, n, -1).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, self.heads, n, n) + mask[None, :, None].to(attn.dtype)
            attn = attn.view(bw, self.heads, n, n)
        return attn.softmax(dim=-1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        bw, n, c = x.shape
        v = self.qkv(x).view(bw, n, 3, self.heads, c // self.heads)[:, :, 2].transpose(1, 2)
        out = (self.attention(x, mask) @ v).transpose(1, 2).reshape(bw, n, c)
        return self.proj(out)


class SwinBlock(nn.Module):
    """Pre-norm block: (shifted) window attention then GELU MLP, both residual."""

    def __init__(self, dim: int, heads: int, window: int, shift: int, grid: int, mlp_ratio: float):
        super().__init__()
        self.window = min(window, grid)
        self.shift = shift if grid > window else 0
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, self.window)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        self._masks: dict[tuple[int, int], torch.Tensor] = {}

    def mask_for(self, h: int, w: int) -> torch.Tensor:
        if (h, w) not in self._masks:
            self._masks[(h, w)] = shift_mask(h, w, self.window, self.shift)
        return self._masks[(h, w)]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        if h % self.window or w % self.window:
            raise SizeError(f"token grid {h}x{w} not divisible by window {self.window}")
        y = self.norm1(x)
        if self.shift:
            y = torch.roll(y, shifts=(-self.shift, -self.shift), dims=(1, 2))
        mask = self.mask_for(h, w) if self.shift else None
        y = window_reverse(self.attn(window_partition(y, self.window), mask), self.window, h, w)
        if self.shift:
            y = torch.roll(y, shifts=(self.shift, self.shift), dims=(1, 2))
        x = x + y
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    def __init__(self, patch_size: int, dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Linear(patch_size * patch_size * 3, dim)
        self.norm = nn.LayerNorm(dim)

    def patches(self, img: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, H/p, W/p, p*p*3), each patch flattened row, col, channel."""
        b, c, h, w = img.shape
        p = self.patch_size
        if h % p or w % p:
            raise SizeError(f"image {w}x{h} not divisible by patch size {p}")
        x = img.view(b, c, h // p, p, w // p, p).permute(0, 2, 4, 3, 5, 1)
        return x.reshape(b, h // p, w // p, p * p * c)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.norm(self.proj(self.patches(img)))


class PatchMerging(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    @staticmethod
    def gather(x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise SizeError(f"token grid {h}x{w} has an odd side")
        x0 = x[:, 0::2, 0::2]
        x1 = x[:, 1::2, 0::2]
        x2 = x[:, 0::2, 1::2]
        x3 = x[:, 1::2, 1::2]
        return torch.cat([x0, x1, x2, x3], dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.reduction(self.norm(self.gather(x)))


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg.patch_size, cfg.embed_dim)
        grid = cfg.input_size // cfg.patch_size
        self.merges = nn.ModuleList()
        self.stages = nn.ModuleList()
        for k in range(4):
            dim = cfg.embed_dim * 2**k
            side = grid >> k
            if k:
                self.merges.append(PatchMerging(dim // 2))
            blocks = [
                SwinBlock(
                    dim,
                    cfg.heads[k],
                    cfg.window,
                    cfg.window // 2 if (cfg.shifted and i % 2 == 1) else 0,
                    side,
                    cfg.mlp_ratio,
                )
                for i in range(cfg.depths[k])
            ]
            self.stages.append(nn.Sequential(*blocks))

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        """Feature pyramid ``[F1, F2, F3, F4]`` for images (B, 3, H, W) in [0, 1]."""
        x = self.stages[0](self.patch_embed(img))
        feats = [x]
        for merge, stage in zip(self.merges, self.stages[1:]):
            x = stage(merge(x))
            feats.append(x)
        return feats


def init_params(module: nn.Module, rng: Rng) -> nn.Module:
    """Truncated-normal (std 0.02, cut at 2 std) weights, zero biases, unit norm gains."""
    gen = rng.torch()
    with torch.no_grad():
        for name, p in module.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            owner = module.get_submodule(name.rsplit(".", 1)[0]) if "." in name else module
            if isinstance(owner, nn.LayerNorm):
                p.fill_(1.0 if leaf == "weight" else 0.0)
            elif leaf == "bias":
                p.zero_()
            else:
                nn.init.trunc_normal_(p, std=0.02, a=-0.04, b=0.04, generator=gen)
    return module


def build_backbone(cfg: BackboneConfig, rng: Rng | None = None) -> Backbone:
    net = Backbone(cfg)
    return init_params(net, rng if rng is not None else Rng(cfg.seed))


def forward_pyramid(img, net: Backbone) -> list[torch.Tensor]:
    """Run the backbone on an (H, W, 3) float array or (B, 3, H, W) tensor."""
    x = torch.as_tensor(img)
    if x.dim() == 3:
        x = x.permute(2, 0, 1).unsqueeze(0)
    dtype = next(net.parameters()).dtype
    x = x.to(dtype)
    h, w = x.shape[-2:]
    unit = net.cfg.patch_size * 8
    if h % unit or w % unit:
        raise SizeError(f"input {w}x{h} must be a multiple of {unit}")
    return net(x)


def backward(output: torch.Tensor, module: nn.Module, upstream=None, inputs: tuple = ()) -> dict:
    """Gradients of ``output`` w.r.t. every parameter of ``module`` (and ``inputs``).

    Returns ``{name: grad}``; inputs are keyed ``"input0"``, ``"input1"``, ...
    """
    if output.grad_fn is None:
        raise StateError("no recorded forward pass to differentiate")
    named = list(module.named_parameters())
    names = [n for n, _ in named] + [f"input{i}" for i in range(len(inputs))]
    tensors = [p for _, p in named] + list(inputs)
    seed = torch.ones_like(output) if upstream is None else torch.as_tensor(upstream, dtype=output.dtype).expand_as(output)
    grads = torch.autograd.grad(output, tensors, grad_outputs=seed, allow_unused=True)
    return {n: (torch.zeros_like(t) if g is None else g) for n, t, g in zip(names, tensors, grads)}
