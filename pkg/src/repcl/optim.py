"""Adam optimizer over named parameter groups."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


class Adam:
    """Adam with per-group learning rates and decoupled weight decay.

    groups: list of (params, lr) where params is a list of Tensors. Weight
    decay multiplies parameters by (1 - lr*wd) before the Adam update and is
    skipped for parameters that carry no gradient this step.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for params, _ in self.groups:
            for p in params:
                p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for params, lr in self.groups:
            for p in params:
                if p.grad is None:
                    continue
                if self.weight_decay:
                    p.data *= 1.0 - lr * self.weight_decay
                key = id(p)
                m = self._m.get(key)
                if m is None:
                    m = np.zeros_like(p.data)
                    v = np.zeros_like(p.data)
                else:
                    v = self._v[key]
                m = b1 * m + (1.0 - b1) * p.grad
                v = b2 * v + (1.0 - b2) * (p.grad * p.grad)
                self._m[key] = m
                self._v[key] = v
                p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
