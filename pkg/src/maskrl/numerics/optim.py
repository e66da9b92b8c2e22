"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor


class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self, shapes, dtypes, learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self.m = [np.zeros(s, d) for s, d in zip(shapes, dtypes)]
        self.v = [np.zeros(s, d) for s, d in zip(shapes, dtypes)]
        self.step_count = 0
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """One in-place Adam update. ``None`` gradients count as zero."""
    if len(params) != len(state.m):
        raise DimensionError(f"{len(params)} params vs state for {len(state.m)}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    lr = state.learning_rate
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is not None and g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} vs param {p.shape}")
        m *= b1
        v *= b2
        if g is not None:
            m += (1.0 - b1) * g
            v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


class Adam:
    """Convenience wrapper applying ``adam_step`` to a list of Tensors."""

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(
            [p.data.shape for p in self.params],
            [p.data.dtype for p in self.params],
            learning_rate, beta1, beta2, epsilon,
        )

    def step(self) -> None:
        adam_step([p.data for p in self.params],
                  [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
