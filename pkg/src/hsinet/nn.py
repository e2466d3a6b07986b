"""Parameterized layers and the module registry they hang off.

A Module tracks its parameters, its non-trainable buffers (batch-norm
running statistics) and its child modules, exposing them depth-first
under dotted names. That registry order is the canonical serialization
order for checkpoints, so it must stay stable across runs.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def buffer(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=False)
        self._buffers[name] = t
        return t

    # -- registry walking -------------------------------------------------

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = ""):
        for name, t in self._buffers.items():
            yield prefix + name, t
        for child_name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def named_state(self):
        """Checkpoint registry: all parameters, then all buffers."""
        yield from ((n, t, True) for n, t in self.named_parameters())
        yield from ((n, t, False) for n, t in self.named_buffers())

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    # -- mode and dtype ----------------------------------------------------

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to_dtype(self, dtype):
        """Switch every parameter and buffer in place (float64 for grad checks)."""
        for _, t in self.named_parameters():
            t.data = t.data.astype(dtype)
            t.grad = None
        for _, t in self.named_buffers():
            t.data = t.data.astype(dtype)
        return self

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None


class ModuleList(Module):
    """Sequence of children addressed by index."""

    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.weight = self.param("weight", _uniform(rng, (d_in, d_out), d_in))
        self.bias = self.param("bias", np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        return out if self.bias is None else T.add(out, self.bias)


class Conv2d(Module):
    """3x3/1x1-style planar convolution, stride 1, size-preserving padding."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 bias: bool = True):
        super().__init__()
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.weight = self.param("weight", _uniform(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel))
        self.bias = self.param("bias", np.zeros(c_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)


class SpectralConv(Module):
    """Depth-axis convolution over the channel-as-depth layout (N,1,S,H,W)."""

    def __init__(self, kernel_d: int, rng: np.random.Generator):
        super().__init__()
        self.kernel_d = kernel_d
        self.weight = self.param("weight", _uniform(rng, (1, 1, kernel_d, 1, 1), kernel_d))
        self.bias = self.param("bias", np.zeros(1))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.weight, self.bias, pad_d=(self.kernel_d - 1) // 2)


class BatchNorm2d(Module):
    """Per-channel normalization with running statistics for inference."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gain = self.param("gain", np.ones(channels))
        self.shift = self.param("shift", np.zeros(channels))
        self.running_mean = self.buffer("running_mean", np.zeros(channels))
        self.running_var = self.buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))  # biased, matching the normalization
            m = self.momentum
            self.running_mean.data = ((1 - m) * self.running_mean.data + m * mean).astype(self.running_mean.dtype)
            self.running_var.data = ((1 - m) * self.running_var.data + m * var).astype(self.running_var.dtype)
            return T.batch_norm(x, self.gain, self.shift, self.eps)
        c = self.channels
        rm = self.running_mean.data.reshape(1, c, 1, 1)
        rstd = 1.0 / np.sqrt(self.running_var.data.reshape(1, c, 1, 1) + self.eps)
        normed = T.mul(T.sub(x, Tensor(rm)), Tensor(rstd))
        return T.add(T.mul(normed, T.reshape(self.gain, (1, c, 1, 1))), T.reshape(self.shift, (1, c, 1, 1)))


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, eps: float = 1e-5):
        super().__init__()
        if channels % groups != 0:
            raise ConfigError(f"group count {groups} must divide channels {channels}")
        self.groups, self.channels, self.eps = groups, channels, eps
        self.gain = self.param("gain", np.ones(channels))
        self.shift = self.param("shift", np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.groups, self.gain, self.shift, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.gain = self.param("gain", np.ones(dim))
        self.shift = self.param("shift", np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift, self.eps)
