"""Adam with bias correction and the poly learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ParamStore


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_lr: float = 5e-4
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(store: ParamStore, state: AdamState, lr: float | None = None) -> None:
    """One Adam update of every trainable parameter in ``store`` (in place).

    ``weight_decay`` is added to the gradient (L2 form); it defaults to zero.
    """
    lr = state.base_lr if lr is None else lr
    params = store.trainable()
    for p in params:
        if p.grad is None or p.grad.shape != p.value.shape:
            raise ValueError(f"parameter {p.name!r} has no gradient of matching shape; run backward first")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for p in params:
        g = p.grad.astype(np.float64)
        if state.weight_decay:
            g = g + state.weight_decay * p.value
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros(p.value.shape)
            state.v[p.name] = np.zeros(p.value.shape)
        v = state.v[p.name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if lr:
            update = lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
            p.value = (p.value - update).astype(p.value.dtype)


@dataclass(frozen=True)
class PolySchedule:
    base_lr: float
    max_iter: int
    power: float = 0.9

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.max_iter <= 0:
            raise ValueError("max_iter must be positive")

    def __call__(self, it: int) -> float:
        return poly_lr(self, it)


def poly_lr(schedule: PolySchedule, it: int) -> float:
    """base_lr * (1 - it/max_iter) ** power, for 0 <= it <= max_iter."""
    if not 0 <= it <= schedule.max_iter:
        raise ValueError(f"iteration {it} outside [0, {schedule.max_iter}]")
    return schedule.base_lr * (1.0 - it / schedule.max_iter) ** schedule.power
