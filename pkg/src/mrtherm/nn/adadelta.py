"""Adadelta with a learning-rate multiplier.

Per parameter p with gradient g:

    E[g^2]  <- rho E[g^2] + (1 - rho) g^2
    delta    = -lr * sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
    E[dx^2] <- rho E[dx^2] + (1 - rho) delta^2
    p       <- p + delta
"""

from __future__ import annotations

import numpy as np


class Adadelta:
    def __init__(self, params: dict, learning_rate: float = 1.0,
                 rho: float = 0.95, epsilon: float = 1e-6):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        self.params = params
        self.lr = learning_rate
        self.rho = rho
        self.eps = epsilon
        self.acc_grad2 = {k: np.zeros_like(v) for k, v in params.items()}
        self.acc_delta2 = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for key, p in self.params.items():
            g = grads[key]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {key}")
            eg2 = self.acc_grad2[key]
            ed2 = self.acc_delta2[key]
            eg2 *= self.rho
            eg2 += (1 - self.rho) * g * g
            delta = -self.lr * np.sqrt(ed2 + self.eps) / np.sqrt(eg2 + self.eps) * g
            ed2 *= self.rho
            ed2 += (1 - self.rho) * delta * delta
            p += delta
