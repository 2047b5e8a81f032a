"""First-order optimizers over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .tensor import Tensor


class NonFiniteGradError(RuntimeError):
    """A gradient contained inf/nan; the whole update is rejected."""


@dataclass
class OptimizerState:
    kind: str  # "sgd" | "adam"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def optimizer_step(params: Dict[str, Tensor], state: OptimizerState) -> None:
    """Apply one update using each parameter's accumulated .grad, then clear it.

    Parameters without a gradient (frozen or unused this step) are skipped.
    """
    updates = {}
    for name in sorted(params):
        p = params[name]
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradError(f"non-finite gradient for parameter {name!r}; update rejected")
        updates[name] = p.grad

    state.step_count += 1
    t = state.step_count
    lr = state.learning_rate
    for name, g in updates.items():
        p = params[name]
        if state.kind == "sgd":
            p.data = p.data - (lr * g).astype(p.data.dtype)
        else:
            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = np.zeros_like(g, dtype=np.float64)
                v = np.zeros_like(g, dtype=np.float64)
            m = state.beta1 * m + (1 - state.beta1) * g
            v = state.beta2 * v + (1 - state.beta2) * (g * g)
            state.m[name] = m
            state.v[name] = v
            mhat = m / (1 - state.beta1 ** t)
            vhat = v / (1 - state.beta2 ** t)
            p.data = p.data - (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
        p.grad = None


def zero_grads(params: Dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
