"""Module container and the primitive trainable layers."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(T.default_dtype())


class Module:
    """Parameters, buffers and child modules are discovered from attributes
    in assignment order, so names are stable across runs."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, (Module, Parameter)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{key}", value
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class PointwiseConv(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(glorot(rng, (c_out, c_in), c_in, c_out))
        self.bias = Parameter(np.zeros(c_out, dtype=T.default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.pointwise_conv(x, self.weight, self.bias)


class TemporalConv(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, dilation: int,
                 rng: np.random.Generator, bias: bool = True):
        self.dilation = dilation
        self.weight = Parameter(glorot(rng, (c_out, c_in, kernel), c_in * kernel, c_out * kernel))
        self.bias = Parameter(np.zeros(c_out, dtype=T.default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_temporal(x, self.weight, self.bias, self.dilation)


class BatchNorm(Module):
    """Per-channel batch normalization; ``enabled=False`` makes it a no-op."""

    def __init__(self, channels: int, enabled: bool = True, momentum: float = 0.1):
        self.enabled = enabled
        self.momentum = momentum
        if enabled:
            dt = T.default_dtype()
            self.gamma = Parameter(np.ones(channels, dtype=dt))
            self.beta = Parameter(np.zeros(channels, dtype=dt))
            self._buffers = {"running_mean": np.zeros(channels, dtype=dt),
                             "running_var": np.ones(channels, dtype=dt)}

    def forward(self, x: Tensor) -> Tensor:
        if not self.enabled:
            return x
        return T.batch_norm(x, self.gamma, self.beta, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.momentum)


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = Parameter(glorot(rng, (c_out, c_in), c_in, c_out))
        self.bias = Parameter(np.zeros(c_out, dtype=T.default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)
