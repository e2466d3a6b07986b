"""Minimal reverse-mode differentiable tensor kernel backed by numpy.

Every operation the network composes lives here: elementwise math,
matmul, shape surgery, reductions, the two convolutions, pooling,
normalization, softmax/attention and the classification loss. Forward
calls record a graph of closures; ``Tensor.backward`` replays it in
reverse topological order and accumulates gradients into ``.grad``.

Compute runs in float32; verification (see gradcheck) builds the same
graphs in float64. Tensors are treated as immutable after construction:
ops never write into their inputs, so values can be shared freely.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


class _GradMode:
    enabled = True


class no_grad:
    """Context manager that disables graph recording (cheap inference)."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


class Tensor:
    """Dense n-d float array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable ``.grad`` buffer."""
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        order = _toposort(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype)
    elif isinstance(value, (int, float)):
        # bare python scalars must not promote a float32 graph to float64
        arr = arr.astype(np.float32)
    return Tensor(arr)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; training graphs are deep enough to overflow recursion
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _GradMode.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum_node(t: Tensor, piece: np.ndarray):
    if t.requires_grad:
        t.grad = piece if t.grad is None else t.grad + piece


# -- elementwise arithmetic ----------------------------------------------------


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; a bare python scalar adopts the other side's dtype."""
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and isinstance(a, (int, float)):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data + b.data

    def backward(g):
        _accum_node(a, _unbroadcast(g, a.shape))
        _accum_node(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data - b.data

    def backward(g):
        _accum_node(a, _unbroadcast(g, a.shape))
        _accum_node(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data * b.data

    def backward(g):
        _accum_node(a, _unbroadcast(g * b.data, a.shape))
        _accum_node(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data / b.data

    def backward(g):
        _accum_node(a, _unbroadcast(g / b.data, a.shape))
        _accum_node(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum_node(a, -g)

    return _make(-a.data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accum_node(a, g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum_node(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        _accum_node(a, g / (2.0 * data))

    return _make(data, (a,), backward)


# -- nonlinearities ------------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, 0)

    def backward(g):
        _accum_node(a, g * mask)

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
    data = data.astype(x.dtype, copy=False)

    def backward(g):
        _accum_node(a, g * data * (1.0 - data))

    return _make(data, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)
    data = data.astype(x.dtype, copy=False)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        _accum_node(a, g * local)

    return _make(data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; spans sum to one."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum_node(a, (g - dot) * data)

    return _make(data, (a,), backward)


# -- shape surgery ---------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def backward(g):
        _accum_node(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)

    def backward(g):
        _accum_node(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def take(a, index) -> Tensor:
    """Basic slicing/indexing; the gradient scatters back into place."""
    a = as_tensor(a)
    # np.array keeps 0-d results 0-d (ascontiguousarray would promote to 1-d)
    data = np.array(a.data[index])
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        _accum_node(a, full)

    return _make(data, (a,), backward)


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum_node(p, g[tuple(sl)])

    return _make(data, tuple(parts), backward)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape

    def backward(g):
        _accum_node(a, _unbroadcast(g, orig))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward)


# -- reductions -------------------------------------------------------------------


def _restore_dims(g: np.ndarray, shape, axis, keepdims):
    if keepdims or axis is None:
        return g
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(shape) for ax in axes)
    for ax in sorted(axes):
        g = np.expand_dims(g, ax)
    return g


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        g = _restore_dims(np.asarray(g), shape, axis, keepdims)
        _accum_node(a, np.broadcast_to(g, shape).astype(a.dtype, copy=False))

    return _make(np.asarray(data, dtype=a.dtype), (a,), backward)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.shape
    count = a.size if axis is None else int(np.prod([shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))

    def backward(g):
        g = _restore_dims(np.asarray(g), shape, axis, keepdims)
        _accum_node(a, (np.broadcast_to(g, shape) / count).astype(a.dtype, copy=False))

    return _make(np.asarray(data, dtype=a.dtype), (a,), backward)


def reduce_max(a, axis=None, keepdims=False) -> Tensor:
    """Max along one axis (or all); the gradient routes to the first argmax."""
    a = as_tensor(a)
    if axis is None:
        flat = a.reshape((a.size,))
        out = reduce_max(flat, axis=0, keepdims=False)
        return out if not keepdims else reshape(out, (1,) * a.ndim)
    if isinstance(axis, tuple):
        raise ShapeError("reduce_max takes a single axis; reshape first for multi-axis maxima")
    data = a.data.max(axis=axis, keepdims=keepdims)
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)  # first argmax wins on ties
    shape = a.shape

    def backward(g):
        g = _restore_dims(np.asarray(g), shape, axis, keepdims)  # now same shape as idx
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, idx, g, axis)
        _accum_node(a, full)

    return _make(np.asarray(data, dtype=a.dtype), (a,), backward)


# -- linear algebra -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-d or higher operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        _accum_node(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        _accum_node(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _make(data, (a, b), backward)


# -- convolutions ---------------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, ph: int, pw: int):
    n, c, h, w = x.shape
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + ho, j:j + wo]
    return cols, ho, wo


def conv2d(x, weight, bias=None, pad: int | None = None) -> Tensor:
    """2-d cross-correlation with zero padding, stride 1.

    ``x`` is C_in x H x W or N x C_in x H x W; ``weight`` is
    C_out x C_in x k x k. ``pad=None`` means (k-1)/2 per side, which
    preserves the spatial size for odd kernels.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    xt = reshape(x, (1,) + x.shape) if squeeze else x
    if xt.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d operands, got input {x.shape}, weight {weight.shape}")
    n, cin, h, w = xt.shape
    cout, cw, kh, kw = weight.shape
    if cin != cw:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, weight expects {cw}")
    if pad is None:
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"conv2d with implicit padding needs odd kernels, got {kh}x{kw}")
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    else:
        ph = pw = int(pad)

    cols, ho, wo = _im2col(xt.data, kh, kw, ph, pw)
    colmat = cols.reshape(n, cin * kh * kw, ho * wo)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = np.matmul(wmat[None], colmat).reshape(n, cout, ho, wo)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
        out = out + bias.data.reshape(1, cout, 1, 1)

    parents = (xt, weight) if bias is None else (xt, weight, bias)

    def backward(g):
        gmat = g.reshape(n, cout, ho * wo)
        if weight.requires_grad:
            dw = np.matmul(gmat, colmat.swapaxes(1, 2)).sum(axis=0)
            _accum_node(weight, dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accum_node(bias, g.sum(axis=(0, 2, 3)))
        if xt.requires_grad:
            dcol = np.matmul(wmat.T[None], gmat).reshape(n, cin, kh, kw, ho, wo)
            dxp = np.zeros((n, cin, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + ho, j:j + wo] += dcol[:, :, i, j]
            _accum_node(xt, dxp[:, :, ph:ph + h, pw:pw + w])

    result = _make(out, parents, backward)
    return reshape(result, result.shape[1:]) if squeeze else result


def conv3d(x, weight, bias=None, pad_d: int = 1) -> Tensor:
    """Spectral-axis convolution: single 1 x 1 x k_d filter, spatial cells untouched.

    ``x`` is 1 x S x H x W or N x 1 x S x H x W; ``weight`` is 1 x 1 x k_d x 1 x 1.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 4
    xt = reshape(x, (1,) + x.shape) if squeeze else x
    if xt.ndim != 5 or xt.shape[1] != 1:
        raise ShapeError(f"conv3d expects input 1xSxHxW or Nx1xSxHxW, got {x.shape}")
    if weight.ndim != 5 or weight.shape != (1, 1, weight.shape[2], 1, 1):
        raise ShapeError(f"conv3d weight must be 1x1xk_dx1x1, got {weight.shape}")
    n, _, s, h, w = xt.shape
    kd = weight.shape[2]
    if s < 1:
        raise ShapeError("conv3d needs spectral depth >= 1")
    so = s + 2 * pad_d - kd + 1
    if so < 1:
        raise ShapeError(f"conv3d output depth {so} < 1 for depth {s}, kernel {kd}, pad {pad_d}")

    xp = np.pad(xt.data, ((0, 0), (0, 0), (pad_d, pad_d), (0, 0), (0, 0)))
    wk = weight.data.reshape(kd)
    out = np.zeros((n, 1, so, h, w), dtype=xt.dtype)
    for d in range(kd):
        out += wk[d] * xp[:, :, d:d + so]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.size != 1:
            raise ShapeError(f"conv3d bias must be a scalar, got shape {bias.shape}")
        out = out + bias.data.reshape(())

    parents = (xt, weight) if bias is None else (xt, weight, bias)

    def backward(g):
        if weight.requires_grad:
            dw = np.empty(kd, dtype=g.dtype)
            for d in range(kd):
                dw[d] = (g * xp[:, :, d:d + so]).sum()
            _accum_node(weight, dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accum_node(bias, np.asarray(g.sum(), dtype=g.dtype).reshape(bias.shape))
        if xt.requires_grad:
            dxp = np.zeros_like(xp)
            for d in range(kd):
                dxp[:, :, d:d + so] += wk[d] * g
            _accum_node(xt, dxp[:, :, pad_d:pad_d + s])

    result = _make(out, parents, backward)
    return reshape(result, result.shape[1:]) if squeeze else result


# -- pooling ---------------------------------------------------------------------------


def directional_pool(x, axis: str, mode: str) -> Tensor:
    """1-d global pooling over one spatial axis of a ...xCxHxW map.

    ``axis="horizontal"`` collapses W (one value per row, output ...xCxH);
    ``axis="vertical"`` collapses H (one value per column, output ...xCxW).
    """
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"directional_pool expects at least CxHxW, got {x.shape}")
    if axis == "horizontal":
        reduce_axis = -1
    elif axis == "vertical":
        reduce_axis = -2
    else:
        raise ConfigError(f"directional_pool axis must be 'horizontal' or 'vertical', got {axis!r}")
    if mode == "avg":
        return reduce_mean(x, axis=reduce_axis)
    if mode == "max":
        return reduce_max(x, axis=reduce_axis)
    raise ConfigError(f"directional_pool mode must be 'avg' or 'max', got {mode!r}")


def global_pool2d(x, mode: str) -> Tensor:
    """Collapse the trailing HxW plane to one value per channel."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"global_pool2d expects at least CxHxW, got {x.shape}")
    if mode == "avg":
        return reduce_mean(x, axis=(-2, -1))
    if mode == "max":
        flat = reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))
        return reduce_max(flat, axis=-1)
    raise ConfigError(f"global_pool2d mode must be 'avg' or 'max', got {mode!r}")


# -- normalization -----------------------------------------------------------------------


def _standardize(x: Tensor, axis):
    mu = reduce_mean(x, axis=axis, keepdims=True)
    centered = sub(x, mu)
    var = reduce_mean(mul(centered, centered), axis=axis, keepdims=True)
    return centered, var


def layer_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing feature axis, then apply the affine."""
    x = as_tensor(x)
    centered, var = _standardize(x, axis=-1)
    normed = div(centered, sqrt(add(var, eps)))
    return add(mul(normed, gain), shift)


def group_norm(x, groups: int, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalize each group of channels jointly with its spatial extent."""
    x = as_tensor(x)
    squeeze = x.ndim == 3
    xt = reshape(x, (1,) + x.shape) if squeeze else x
    n, c, h, w = xt.shape
    if c % groups != 0:
        raise ConfigError(f"group_norm: channel count {c} not divisible by groups {groups}")
    grouped = reshape(xt, (n, groups, (c // groups) * h * w))
    centered, var = _standardize(grouped, axis=-1)
    normed = reshape(div(centered, sqrt(add(var, eps))), (n, c, h, w))
    gain = as_tensor(gain)
    shift = as_tensor(shift)
    out = add(mul(normed, reshape(gain, (1, c, 1, 1))), reshape(shift, (1, c, 1, 1)))
    return reshape(out, out.shape[1:]) if squeeze else out


def batch_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over the batch and spatial axes (training form)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NxCxHxW, got {x.shape}")
    c = x.shape[1]
    centered, var = _standardize(x, axis=(0, 2, 3))
    normed = div(centered, sqrt(add(var, eps)))
    return add(mul(normed, reshape(as_tensor(gain), (1, c, 1, 1))), reshape(as_tensor(shift), (1, c, 1, 1)))


def normalize(x, kind: str, gain, shift, eps: float = 1e-5, groups: int | None = None) -> Tensor:
    """Dispatch to layer/group/batch normalization by name."""
    if kind == "layer":
        return layer_norm(x, gain, shift, eps)
    if kind == "group":
        if groups is None:
            raise ConfigError("normalize(kind='group') needs a group count")
        return group_norm(x, groups, gain, shift, eps)
    if kind == "batch":
        return batch_norm(x, gain, shift, eps)
    raise ConfigError(f"unknown normalization kind {kind!r}")


# -- attention and loss --------------------------------------------------------------------


def attention_core(q, k, v) -> Tensor:
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d)) V``.

    Operands are ...xNxd; leading axes broadcast (used for heads/batch).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] == 0:
        raise ShapeError("attention_core needs feature dimension d >= 1")
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention_core shape mismatch: Q {q.shape}, K {k.shape}, V {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = mul(matmul(q, k.swapaxes(-1, -2)), scale)
    return matmul(softmax(scores, axis=-1), v)


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; only call on the training path."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g):
        _accum_node(x, g * keep)

    return _make(x.data * keep, (x,), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy; ``labels`` are int class indices."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects NxK logits, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"cross_entropy labels out of range for {k} classes")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    picked = logits.data[np.arange(n), labels]
    data = np.asarray((lse - picked).mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        _accum_node(logits, (g * p / n).astype(logits.dtype, copy=False))

    return _make(data, (logits,), backward)
