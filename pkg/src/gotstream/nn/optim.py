"""Decoupled-weight-decay optimizer with warmup/decay schedule and clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class OptimizerConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    clip_norm: float = 1.0  # global gradient norm; <=0 disables
    warmup_steps: int = 1000
    total_steps: int | None = None  # linear decay target; None = flat after warmup


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], config: OptimizerConfig | None = None):
        self.params = params
        self.config = config or OptimizerConfig()
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def lr_at(self, step: int) -> float:
        """Linear warmup to `lr`, then linear decay to 0 at total_steps."""
        cfg = self.config
        if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
            return cfg.lr * (step + 1) / cfg.warmup_steps
        if cfg.total_steps is None or cfg.total_steps <= cfg.warmup_steps:
            return cfg.lr
        frac = (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)
        return cfg.lr * max(0.0, frac)

    def clip_gradients(self) -> float:
        """Scale all gradients so their global norm is at most clip_norm."""
        cfg = self.config
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        norm = float(np.sqrt(total))
        if cfg.clip_norm > 0 and norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad *= scale
        return norm

    def step(self) -> float:
        """Apply one update; returns the pre-clip gradient norm."""
        cfg = self.config
        norm = self.clip_gradients()
        lr = self.lr_at(self.step_count)
        t = self.step_count + 1
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self._m[name]
            v = self._v[name]
            m += (1.0 - cfg.beta1) * (g - m)
            v += (1.0 - cfg.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            p.data -= lr * update
            if cfg.weight_decay > 0:
                p.data -= lr * cfg.weight_decay * p.data
        self.step_count += 1
        return norm
