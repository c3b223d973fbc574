"""Functional Adam and the step-decay learning-rate schedule."""
from __future__ import annotations

import torch

from .errors import DimensionMismatch


def adam_init(params) -> dict:
    return {
        "t": 0,
        "m": [torch.zeros_like(p) for p in params],
        "v": [torch.zeros_like(p) for p in params],
    }


@torch.no_grad()
def adam_step(params, grads, state: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state["m"]):
        raise DimensionMismatch("params, grads and optimizer state differ in length")
    b1, b2 = betas
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionMismatch(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params, state


def step_lr(lr0: float, epoch: int, decay: float = 0.5, every: int = 20) -> float:
    """Learning rate for zero-based ``epoch``: ``lr0 * decay ** (epoch // every)``."""
    return lr0 * decay ** (epoch // every)
