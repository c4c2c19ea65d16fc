"""Parameter update rules: plain SGD and Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradientError
from .network import NetworkParams


@dataclass
class OptimizerState:
    algorithm: str  # "sgd" or "adam"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, algorithm: str, learning_rate: float, params: NetworkParams) -> "OptimizerState":
        if algorithm not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {algorithm!r}")
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        state = cls(algorithm=algorithm, learning_rate=learning_rate)
        if algorithm == "adam":
            state.m = {k: np.zeros_like(a) for k, a in params.blocks.items()}
            state.v = {k: np.zeros_like(a) for k, a in params.blocks.items()}
        return state


def optimizer_step(
    state: OptimizerState, params: NetworkParams, grads: dict[str, np.ndarray]
) -> tuple[NetworkParams, OptimizerState]:
    """Apply one update in place; returns the same objects for chaining.

    Raises :class:`NonFiniteGradientError` before touching any parameter if
    a gradient block contains NaN or infinity.
    """
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradients in blocks {bad} at step {state.step}")

    state.step += 1
    lr = state.learning_rate
    if state.algorithm == "sgd":
        for name, g in grads.items():
            params.blocks[name] -= lr * g
        return params, state

    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        params.blocks[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
