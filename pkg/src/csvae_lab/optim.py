"""Adam with bias correction and the milestone learning-rate schedule."""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

INITIAL_LR = 1e-3 / 2
MILESTONES = tuple(3 ** i for i in range(7))  # 1, 3, 9, ..., 729
GAMMA = 0.1 ** (1.0 / 7.0)


@dataclass
class AdamState:
    """First/second moment buffers, shape-aligned with their parameters."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], beta1: float = ADAM_BETA1,
                   beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   step=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied to params in place."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and moment buffers must align")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    """lr(epoch) = initial_lr * gamma ** (number of milestones <= epoch)."""

    initial_lr: float = INITIAL_LR
    milestones: tuple = MILESTONES
    gamma: float = GAMMA

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ValueError("milestones must be strictly increasing")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return schedule.initial_lr * schedule.gamma ** bisect_right(schedule.milestones, epoch)
