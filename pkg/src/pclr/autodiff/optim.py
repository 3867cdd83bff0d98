"""Adam optimizer and the half-period cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import Parameter
from ..errors import ConfigError, StateError


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step_count: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 < b < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {b}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


def adam_step(params: Iterable[Parameter], config: AdamConfig) -> None:
    """Apply one bias-corrected Adam update in place, then clear gradients.

    Trainable parameters without a gradient are skipped; non-trainable
    parameters are never modified. ``config.step_count`` advances by one.
    """
    trainable = [p for p in params if p.trainable]
    if not any(p.grad is not None for p in trainable):
        raise StateError("adam_step called with no populated gradients")
    config.step_count += 1
    t = config.step_count
    b1, b2 = config.beta1, config.beta2
    lr_t = config.learning_rate / (1 - b1 ** t)
    v_corr = 1 - b2 ** t
    for p in trainable:
        g = p.grad
        if g is None:
            continue
        dt = p.data.dtype
        g = g.astype(dt, copy=False)
        p.m *= dt.type(b1)
        p.m += dt.type(1 - b1) * g
        p.v *= dt.type(b2)
        p.v += dt.type(1 - b2) * (g * g)
        p.data -= dt.type(lr_t) * p.m / (np.sqrt(p.v / dt.type(v_corr)) + dt.type(config.epsilon))
        p.grad = None


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """``base_lr * (1 + cos(pi * epoch / total_epochs)) / 2`` for ``0 <= epoch <= total_epochs``."""
    if total_epochs <= 0:
        raise ConfigError(f"total_epochs must be positive, got {total_epochs}")
    if not 0 <= epoch <= total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * (1 + math.cos(math.pi * epoch / total_epochs)) / 2
