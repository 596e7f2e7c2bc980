from typing import Dict, List

import numpy as np

from app.config import Settings
from app.services.params import ModelParams
from app.services.tensor import Tensor


class SGD:
    """Plain gradient descent: p <- p - lr * g"""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: ModelParams, grads: List[np.ndarray]) -> ModelParams:
        updated = {
            name: Tensor(p.data - self.learning_rate * g)
            for (name, p), g in zip(params.items(), grads)
        }
        return ModelParams(updated)


class AdamW:
    """Adam with decoupled weight decay; moments are kept per parameter name"""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.99,
                 eps: float = 1e-8, weight_decay: float = 5e-4):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: List[np.ndarray]) -> ModelParams:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        updated = {}
        for (name, p), g in zip(params.items(), grads):
            m = self.beta1 * self.m.get(name, np.zeros_like(g)) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(g)) + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            value = p.data * (1.0 - self.learning_rate * self.weight_decay)
            value = value - self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            updated[name] = Tensor(value)
        return ModelParams(updated)


def make_optimizer(settings: Settings):
    if settings.optimizer == "adamw":
        return AdamW(
            settings.learning_rate,
            beta1=settings.adamw_beta1,
            beta2=settings.adamw_beta2,
            eps=settings.adamw_eps,
            weight_decay=settings.weight_decay,
        )
    return SGD(settings.learning_rate)
