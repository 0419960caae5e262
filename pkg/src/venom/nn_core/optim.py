"""Adam optimizer over named parameter sets."""

import numpy as np

from ..errors import DimensionError


class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    def __init__(self, params):
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adam_step(params, grads, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place. Deterministic given inputs."""
    if lr <= 0.0:
        raise ValueError("lr must be > 0")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, parameter {p.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state
