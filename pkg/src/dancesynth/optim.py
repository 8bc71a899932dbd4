"""Adam optimizer over named parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters.

    `m` and `v` are keyed by parameter name and always match the parameter
    shapes; `step` counts completed updates.
    """

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new params, advances `state`.

    A zero gradient on fresh moments is an exact fixed point (0/eps = 0).
    Parameters with no entry in `grads` are passed through untouched.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out: dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            out[name] = value
            continue
        if grad.shape != value.shape:
            raise ValueError(
                f"adam_step: gradient shape {grad.shape} does not match "
                f"parameter {name!r} shape {value.shape}"
            )
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad**2
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        out[name] = value - state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)
    return out
