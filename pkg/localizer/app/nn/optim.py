"""Nadam (Nesterov-accelerated Adam) with per-parameter moment state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from app.errors import DivergenceError, ShapeError


@dataclass
class OptimizerState:
    learning_rate: float = 0.001
    beta_1: float = 0.9
    beta_2: float = 0.999
    epsilon: float = 1e-7
    step: int = 0
    first_moments: dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: dict[str, np.ndarray] = field(default_factory=dict)


def nadam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
) -> dict[str, np.ndarray]:
    """
    One Nadam update applied in place; returns params.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2
    p <- p - lr * (b1*m_hat + (1-b1)*g/(1-b1^t)) / (sqrt(v_hat) + eps)
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient for {name!r} at step {state.step + 1}")
        if grad.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {grad.shape}, expected {params[name].shape}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta_1, state.beta_2
    bias_1 = 1.0 - b1 ** t
    bias_2 = 1.0 - b2 ** t

    for name, grad in grads.items():
        param = params[name]
        m = state.first_moments.get(name)
        v = state.second_moments.get(name)
        if m is None:
            m = np.zeros_like(param)
            v = np.zeros_like(param)
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        m_hat = m / bias_1
        v_hat = v / bias_2
        update = (b1 * m_hat + (1.0 - b1) * grad / bias_1) / (np.sqrt(v_hat) + state.epsilon)
        param -= (state.learning_rate * update).astype(param.dtype, copy=False)
        state.first_moments[name] = m
        state.second_moments[name] = v
    return params
