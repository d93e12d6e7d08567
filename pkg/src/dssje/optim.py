"""RMSprop parameter updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass
class RmsPropState:
    learning_rate: float = 0.0007
    decay: float = 0.95
    epsilon: float = 1e-6
    clip_norm: float | None = None
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")


def rmsprop_step(params: dict[str, Tensor], state: RmsPropState) -> None:
    """One in-place RMSprop update; gradients are cleared afterwards.

    acc <- decay * acc + (1 - decay) * g**2
    p   <- p - lr * g / (sqrt(acc) + eps)
    """
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    scale = 1.0
    if state.clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params.values()))
        if total > state.clip_norm:
            scale = state.clip_norm / total
    for name, p in params.items():
        g = p.grad * scale
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(p.data)
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        p.data -= state.learning_rate * g / (np.sqrt(acc) + state.epsilon)
        p.grad = None
