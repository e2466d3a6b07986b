"""Finite-difference verification of the reverse-mode gradients.

The check projects the (possibly tensor-valued) output onto a fixed
random direction so a single scalar covers every output element, then
compares the analytic gradient of that scalar against central
differences, element by element. Everything runs in float64: float32
rounding would drown out genuine backward bugs at usable step sizes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor


def rel_error(a: np.ndarray, f: np.ndarray) -> np.ndarray:
    # the 1e-2 floor keeps near-zero gradients from exploding the ratio
    return np.abs(a - f) / (np.abs(a) + np.abs(f) + 1e-2)


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    step: float = 1e-5,
    seed: int = 0,
    threshold: float = 1e-4,
) -> float:
    """Verify d(projection . fn()) / d(param) for every listed parameter.

    ``fn`` must rebuild its graph from the live ``params`` tensors on every
    call, since their ``.data`` buffers are perturbed in place between calls.
    Returns the worst relative error; raises ``NumericError`` when that error
    crosses ``threshold`` or anything non-finite shows up.
    """
    for name, p in params:
        if p.data.dtype != np.float64:
            raise NumericError(f"grad_check requires float64 parameters, {name} is {p.data.dtype}")
        p.grad = None

    out = fn()
    if out.data.dtype != np.float64:
        raise NumericError(f"grad_check requires a float64 output, got {out.data.dtype}")
    if not np.all(np.isfinite(out.data)):
        raise NumericError("grad_check: forward pass produced non-finite values")

    projection = np.random.default_rng(seed).standard_normal(out.shape)
    out.backward(projection)

    worst = 0.0
    for name, p in params:
        analytic = p.grad
        if analytic is None:
            analytic = np.zeros_like(p.data)
        if not np.all(np.isfinite(analytic)):
            raise NumericError(f"grad_check: analytic gradient of {name} is non-finite")

        flat = p.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = float((fn().data * projection).sum())
            flat[i] = saved - step
            lo = float((fn().data * projection).sum())
            flat[i] = saved
            numeric[i] = (hi - lo) / (2.0 * step)
        if not np.all(np.isfinite(numeric)):
            raise NumericError(f"grad_check: finite differences for {name} are non-finite")

        err = rel_error(analytic.reshape(-1), numeric)
        peak = float(err.max()) if err.size else 0.0
        worst = max(worst, peak)
        if peak > threshold:
            at = int(err.argmax())
            raise NumericError(
                f"grad_check failed for {name}[{at}]: analytic {analytic.reshape(-1)[at]:.6e}, "
                f"numeric {numeric[at]:.6e}, rel error {peak:.3e} > {threshold:.1e}"
            )
    return worst
