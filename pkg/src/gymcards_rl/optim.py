from __future__ import annotations

import math

import numpy as np

Arrays = dict[str, np.ndarray]


def global_norm(grads: Arrays) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: Arrays, max_norm: float) -> tuple[Arrays, float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    """Adam on a dict of arrays; ``step`` descends along ``grads``."""

    def __init__(self, params: Arrays, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-5) -> None:
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Arrays, grads: Arrays, lr: float) -> None:
        if lr == 0.0:
            return
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
