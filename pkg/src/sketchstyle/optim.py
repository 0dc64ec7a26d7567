"""Adam with bias correction; moments persist across steps."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class Adam:
    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if isinstance(p, Parameter)]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if not p.trainable:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(np.float32)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def adam_step(params, lr, beta1, beta2, eps, state=None):
    """One-shot functional Adam update; ``state`` carries moments across calls."""
    if state is None:
        state = Adam(params, lr, beta1, beta2, eps)
    state.lr, state.beta1, state.beta2, state.eps = lr, beta1, beta2, eps
    state.step()
    return state
