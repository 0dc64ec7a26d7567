"""Minimal layer containers over the autodiff core."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Parameter container.  Attribute order gives a stable parameter order,
    which checkpointing relies on."""

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, attr in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(attr, Parameter):
                out.append((full, attr))
            elif isinstance(attr, Module):
                out.extend(attr.named_parameters(full + "."))
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{full}.{i}", item))
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def freeze(self):
        for p in self.parameters():
            p.trainable = False

    def checksum(self) -> float:
        return float(sum(np.abs(p.data, dtype=np.float64).sum() for p in self.parameters()))


def he_init(rng: np.random.Generator, shape, fan_in: int):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, kernel, stride=1, padding=0):
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(he_init(rng, (cout, cin, kernel, kernel), cin * kernel * kernel))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, rng, nin, nout, bias_fill: float = 0.0):
        self.weight = Parameter(he_init(rng, (nout, nin), nin))
        self.bias = Parameter(np.full(nout, bias_fill, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)
