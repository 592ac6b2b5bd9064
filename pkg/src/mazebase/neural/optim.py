"""RMSProp without momentum."""
from __future__ import annotations

import numpy as np

from .models import NumericError


class RMSProp:
    def __init__(self, params: dict[str, np.ndarray], lr: float, decay: float = 0.97, eps: float = 1e-6):
        if lr <= 0 or not 0 <= decay < 1 or eps <= 0:
            raise ValueError(f"bad RMSProp settings lr={lr} decay={decay} eps={eps}")
        self.lr, self.decay, self.eps = float(lr), float(decay), float(eps)
        self.state = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update: s <- d*s + (1-d)*g^2; p <- p - lr*g/sqrt(s+eps)."""
        if set(grads) - set(params):
            raise KeyError(f"gradients for unknown parameters {sorted(set(grads) - set(params))}")
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise NumericError(f"{name}: {bad} non-finite gradient entries")
        for name, g in grads.items():
            s = self.state[name]
            s *= self.decay
            s += (1.0 - self.decay) * g * g
            params[name] -= self.lr * g / np.sqrt(s + self.eps)


def rmsprop_step(params, grads, state, lr, decay=0.97, eps=1e-6):
    """Functional form; returns (new params, new state) without touching the inputs."""
    new_p, new_s = {}, {}
    for name, p in params.items():
        g = grads.get(name, np.zeros_like(p))
        s = decay * state.get(name, np.zeros_like(p)) + (1.0 - decay) * g * g
        new_s[name] = s
        new_p[name] = p - lr * g / np.sqrt(s + eps)
    return new_p, new_s
