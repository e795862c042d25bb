"""Differentiable operators.

Each op computes its forward value with numpy and registers a closure that
maps the output gradient to one gradient per input. Only the operators the
models and losses need are provided.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ContractError
from .tensor import Tensor, as_tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _lift(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    return Tensor.from_op(
        a.data + b.data,
        (a, b),
        "add",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    return Tensor.from_op(
        a.data - b.data,
        (a, b),
        "sub",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    if isinstance(a, Tensor) and np.isscalar(b):
        b = float(b)  # python float keeps float32 data float32
        return Tensor.from_op(a.data * b, (a,), "scale", lambda g: (g * b,))
    if isinstance(b, Tensor) and np.isscalar(a):
        return mul(b, a)
    a, b = _lift(a, b)
    return Tensor.from_op(
        a.data * b.data,
        (a, b),
        "mul",
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, c: float) -> Tensor:
    """Division by a python scalar (the only form the losses use)."""
    if not np.isscalar(c):
        raise ContractError("div only supports scalar divisors")
    c = float(c)
    return Tensor.from_op(a.data / c, (a,), "div", lambda g: (g / c,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), "exp", lambda g: (g * out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor.from_op(np.where(mask, a.data, 0).astype(a.dtype), (a,), "relu", lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions / shape


def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(np.asarray(out), (a,), "sum", bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor.from_op(np.asarray(out), (a,), "mean", bw)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor.from_op(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return Tensor.from_op(
        a.data @ b.data,
        (a, b),
        "matmul",
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return add(out, b) if b is not None else out


# ---------------------------------------------------------------- softmax family


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    """Log-softmax via the shifted log-sum-exp, never as log(softmax)."""
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor.from_op(out, (z,), "log_softmax", bw)


def softmax_with_temperature(logits, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """softmax(logits / temperature) along ``axis``; temperature 1 is plain softmax."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    logits = as_tensor(logits)
    scaled = logits if temperature == 1 else div(logits, temperature)
    return exp(log_softmax(scaled, axis=axis))


# ---------------------------------------------------------------- convolution / pooling


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (N, C, Ho, Wo, k, k) strided view
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_windows(dwin: np.ndarray, out_shape, k: int, stride: int) -> np.ndarray:
    # adjoint of _windows: dwin (N, C, Ho, Wo, k, k) -> dx of out_shape
    dx = np.zeros(out_shape, dtype=dwin.dtype)
    ho, wo = dwin.shape[2], dwin.shape[3]
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dwin[..., i, j]
    return dx


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (N, C, H, W) with w (O, C, k, k); square kernels only."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ContractError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    k = w.shape[2]
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = _windows(xp, k, stride)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        dcol = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        dxp = _scatter_windows(dcol, xp.shape, k, stride)
        dx = dxp[:, :, p : p + x.shape[2], p : p + x.shape[3]] if p else dxp
        return (np.ascontiguousarray(dx), dw)

    return Tensor.from_op(out, (x, w), f"conv2d_s{stride}", bw)


def avg_pool2d(x: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    stride = stride or kernel
    win = _windows(x.data, kernel, stride)
    out = win.mean(axis=(4, 5))

    def bw(g):
        dwin = np.broadcast_to(g[..., None, None] / (kernel * kernel), win.shape)
        return (_scatter_windows(dwin, x.shape, kernel, stride),)

    return Tensor.from_op(out, (x,), "avg_pool2d", bw)


def max_pool2d(x: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    stride = stride or kernel
    win = _windows(x.data, kernel, stride)
    flat = win.reshape(win.shape[:4] + (kernel * kernel,))
    idx = flat.argmax(axis=-1)  # first max wins ties
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        dflat = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        return (_scatter_windows(dflat.reshape(win.shape), x.shape, kernel, stride),)

    return Tensor.from_op(out, (x,), "max_pool2d", bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return mean(x, axis=(2, 3))


# ---------------------------------------------------------------- batch norm


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over all axes except the channel axis 1.

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, as torch does). In eval mode the
    running buffers are used and nothing is mutated.
    """
    if x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ContractError(f"batch_norm expects 2-d or 4-d input, got {x.shape}")
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)

    if not training:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv
        out = (g_ * xhat + b_).astype(x.dtype)

        def bw_eval(g):
            return (
                (g * g_ * inv).astype(x.dtype),
                (g * xhat).sum(axis=axes).astype(gamma.dtype),
                g.sum(axis=axes).astype(beta.dtype),
            )

        return Tensor.from_op(out, (x, gamma, beta), "batch_norm_eval", bw_eval)

    m = x.data.size // x.shape[1]
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = g_ * xhat + b_

    unbiased = var.reshape(-1) * (m / max(m - 1, 1))
    running_mean *= 1 - momentum
    running_mean += momentum * mu.reshape(-1)
    running_var *= 1 - momentum
    running_var += momentum * unbiased

    def bw_train(g):
        dxhat = g * g_
        dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True) - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        return (dx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return Tensor.from_op(out, (x, gamma, beta), "batch_norm_train", bw_train)
