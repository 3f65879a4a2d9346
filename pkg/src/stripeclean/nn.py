"""Minimal module system: named parameters, buffers, train/eval mode."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor

DEFAULT_DTYPE = np.float32


class Parameter(Tensor):
    """A trainable leaf tensor with a zero-initialised gradient buffer."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.grad = np.zeros_like(self.data)


class Module:
    """Base class; parameters, buffers and children are discovered from attributes."""

    def __init__(self) -> None:
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def to_dtype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (f64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        for m in self.modules():
            for name in getattr(m, "_buffer_names", ()):
                setattr(m, name, getattr(m, name).astype(dtype))
        return self


def leaky_gain(slope: float = ops.LEAKY_SLOPE) -> float:
    return math.sqrt(2.0 / (1.0 + slope * slope))


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator,
                    dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Kaiming-uniform (fan-in) draw with the LeakyReLU gain."""
    bound = leaky_gain() * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    """``zero_init`` marks the last conv of a residual branch; :func:`init_parameters`
    leaves its weight at zero so the branch starts as an identity map."""

    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int | None = None,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        self.zero_init = zero_init
        self.padding = (k - 1) // 2 if padding is None else padding
        self.weight = Parameter(np.zeros((cout, cin, k, k), dtype=DEFAULT_DTYPE))
        self.bias = Parameter(np.zeros(cout, dtype=DEFAULT_DTYPE)) if bias else None

    @property
    def fan_in(self) -> int:
        return self.cin * self.k * self.k

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 2, stride: int = 2, padding: int = 0,
                 bias: bool = True):
        super().__init__()
        self.cin, self.cout, self.k, self.stride, self.padding = cin, cout, k, stride, padding
        self.weight = Parameter(np.zeros((cin, cout, k, k), dtype=DEFAULT_DTYPE))
        self.bias = Parameter(np.zeros(cout, dtype=DEFAULT_DTYPE)) if bias else None

    @property
    def fan_in(self) -> int:
        # inputs contributing to one output pixel
        return max(1, self.cin * self.k * self.k // (self.stride * self.stride))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(c, dtype=DEFAULT_DTYPE))
        self.bias = Parameter(np.zeros(c, dtype=DEFAULT_DTYPE))
        self.running_mean = np.zeros(c, dtype=DEFAULT_DTYPE)
        self.running_var = np.ones(c, dtype=DEFAULT_DTYPE)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                                self.training, self.momentum, self.eps)


def init_parameters(model: Module, seed: int, zero_branches: bool = True) -> None:
    """Deterministic init: Kaiming-uniform conv weights, zero biases, BN gamma=1 beta=0.

    With ``zero_branches``, convs flagged ``zero_init`` get zero weights; a
    draw is still consumed for them so the other layers do not depend on it.
    """
    rng = np.random.default_rng(seed)
    for m in model.modules():
        if isinstance(m, (Conv2d, ConvTranspose2d)):
            w = kaiming_uniform(m.weight.shape, m.fan_in, rng, m.weight.dtype)
            m.weight.data = np.zeros_like(w) if zero_branches and getattr(m, "zero_init", False) else w
            if m.bias is not None:
                m.bias.data[...] = 0
        elif isinstance(m, BatchNorm2d):
            m.weight.data[...] = 1
            m.bias.data[...] = 0
            m.running_mean[...] = 0
            m.running_var[...] = 1
    for p in model.parameters():
        p.grad = np.zeros_like(p.data)
