"""ADAM with decoupled weight decay and an epoch-level linear warmup."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def warmup_multiplier(epoch: int, warmup_epochs: int = 20, factor: float = 0.01) -> float:
    """Linear ramp from ``factor`` at epoch 0 to 1 at ``warmup_epochs``; 1 after."""
    if warmup_epochs <= 0 or epoch >= warmup_epochs:
        return 1.0
    return factor + (1.0 - factor) * epoch / warmup_epochs


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 2e-4
    warmup_epochs: int = 20
    warmup_factor: float = 0.01
    step: int = 0
    epoch: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def current_lr(self) -> float:
        return self.lr * warmup_multiplier(self.epoch, self.warmup_epochs, self.warmup_factor)

    def reset_moments(self) -> None:
        self.m, self.v, self.step = [], [], 0


def adam_step(opt: OptimizerState, params: list, grads: list) -> list:
    """Update ``params`` in place and return them."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or opt.m[i].shape != p.shape:
            raise ValueError(f"parameter {i}: shape {p.shape} vs gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {i}")
    opt.step += 1
    lr = opt.current_lr()
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + opt.eps)
        if opt.weight_decay:
            update = update + opt.weight_decay * p
        p -= lr * update
    return params
