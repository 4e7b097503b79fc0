"""SGD with Nesterov momentum and milestone learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError
from .tensor import Parameter


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 0.0005
    lr_schedule: list[tuple[int, float]] = field(default_factory=lambda: [(40, 10.0), (60, 10.0)])

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        epochs = [e for e, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigError(f"lr_schedule epochs must be strictly increasing, got {epochs}")
        if any(d <= 0 for _, d in self.lr_schedule):
            raise ConfigError("lr_schedule divisors must be positive")


def lr_at_epoch(cfg: OptimizerConfig, epoch: int) -> float:
    """Learning rate for the 0-based ``epoch``; each milestone m divides it from epoch m on."""
    lr = cfg.learning_rate
    for milestone, divisor in cfg.lr_schedule:
        if epoch >= milestone:
            lr /= divisor
    return lr


def sgd_step(params: Iterable[Parameter], cfg: OptimizerConfig, lr: float | None = None) -> None:
    """One in-place update; gradients are zeroed afterwards.

    Nesterov:  v <- m v - lr (g + wd theta);  theta <- theta + m v - lr (g + wd theta)
    Classical: v <- m v - lr (g + wd theta);  theta <- theta + v
    """
    lr = cfg.learning_rate if lr is None else lr
    m, wd = cfg.momentum, cfg.weight_decay
    for p in params:
        if p.grad is None:
            continue
        step = p.grad + wd * p.data if wd else p.grad.copy()
        step *= lr
        p.velocity *= m
        p.velocity -= step
        if cfg.nesterov:
            p.data += m * p.velocity - step
        else:
            p.data += p.velocity
        p.grad = np.zeros_like(p.data)
