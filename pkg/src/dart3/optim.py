"""Minimal optimizers over dictionaries of numpy parameter vectors (updated in place)."""
import copy

import numpy as np


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for key, g in grads.items():
            params[key] -= self.lr * g

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class Adam:
    """Adam with bias correction; moments are created lazily per parameter key."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        for key, g in grads.items():
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
                self.t[key] = 0
            # per-key step count: cameras join the stream at different times
            self.t[key] += 1
            t = self.t[key]
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[key] / (1.0 - self.beta1 ** t)
            v_hat = self.v[key] / (1.0 - self.beta2 ** t)
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return copy.deepcopy({"m": self.m, "v": self.v, "t": self.t})

    def load_state_dict(self, state: dict) -> None:
        state = copy.deepcopy(state)
        self.m, self.v, self.t = state["m"], state["v"], state["t"]


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")
