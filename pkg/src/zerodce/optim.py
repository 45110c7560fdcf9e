"""Adam with a fixed learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkWeights
from .numerics import ContractError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_arrays(cls, arrays, **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            **hyper,
        )


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam step on plain arrays. Mutates ``state``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractError("parameter, gradient and moment lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        dt = p.dtype.type
        m = dt(b1) * state.m[k] + dt(1 - b1) * g
        v = dt(b2) * state.v[k] + dt(1 - b2) * (g * g)
        state.m[k], state.v[k] = m, v
        m_hat = m / dt(c1)
        v_hat = v / dt(c2)
        out.append(p - dt(state.lr) * m_hat / (np.sqrt(v_hat) + dt(state.eps)))
    return out


def adam_step(weights: NetworkWeights, grads: list[np.ndarray], state: AdamState) -> tuple[NetworkWeights, AdamState]:
    """Return new weights after one Adam step; ``state`` is updated in place."""
    new = adam_update(weights.arrays(), grads, state)
    return NetworkWeights.from_arrays(weights.config, new[0::2], new[1::2]), state
