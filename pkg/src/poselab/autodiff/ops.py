"""Differentiable operations.

Every function takes and returns :class:`Tensor`. Binary elementwise ops
accept equal shapes or a scalar (shape ``()`` or a Python number) on either
side; nothing else broadcasts. Convolution and pooling accept ``C x H x W``
or batched ``N x C x H x W`` input.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, ShapeError, Tensor, as_tensor, record

L2_EPS = 1e-20


def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0


def _binary_operands(a, b, kind: str):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # undo scalar broadcasting
    if _is_scalar(t) and g.ndim:
        return np.asarray(g.sum())
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    out = Tensor(a.data + b.data)
    return record((a, b), out, lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    out = Tensor(a.data - b.data)
    return record((a, b), out, lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    out = Tensor(a.data * b.data)
    return record((a, b), out,
                  lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    out = Tensor(a.data * factor)
    return record((a,), out, lambda g: (g * factor,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return record((a,), out, lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(s)
    return record((a,), out, lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t)
    return record((a,), out, lambda g: (g * (1.0 - t * t),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e)
    return record((a,), out, lambda g: (g * e,))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "exp": exp}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch by name. ``scale`` takes its factor as ``b`` (a number)."""
    if kind in _UNARY:
        if b is not None:
            raise TypeError(f"{kind} is unary")
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise TypeError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {kind!r}")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    return record((a, b), out, lambda g: (g @ b.data.T, a.data.T @ g))


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a bias along the last axis of ``x`` (rows of a batch)."""
    if bias.ndim != 1 or x.ndim < 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias_add: bias {bias.shape} does not match trailing axis of {x.shape}")
    out = Tensor(x.data + bias.data)
    lead = tuple(range(x.ndim - 1))
    return record((x, bias), out, lambda g: (g, g.sum(axis=lead) if lead else g))


def _as_batch(x: Tensor, what: str):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"{what}: expected C x H x W or N x C x H x W input, got {x.shape}")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
           bias: Optional[Tensor] = None) -> Tensor:
    """2-D cross-correlation (the deep-learning 'convolution')."""
    xd, squeeze = _as_batch(x, "conv2d")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d: kernel must be C_out x C_in x k x k, got {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride {stride} / padding {padding}")
    n, c, h, w = xd.shape
    c_out, c_in, k, _ = kernel.shape
    if c_in != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {c_in}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise ShapeError(f"conv2d: kernel {k}x{k} larger than padded input {hp}x{wp}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({c_out},)")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    wmat = kernel.data.reshape(c_out, -1)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    y = y.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    out = Tensor(np.ascontiguousarray(y[0] if squeeze else y))

    def _backward(g):
        g4 = g[None] if squeeze else g
        gmat = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
        g_kernel = (gmat.T @ cols).reshape(kernel.shape)
        g_cols = (gmat @ wmat).reshape(n, ho, wo, c, k, k)
        g_xp = np.zeros((n, c, hp, wp), dtype=DTYPE)
        if stride == k:
            # windows tile the input without overlap: col2im is a reshape
            g_xp[:, :, :ho * k, :wo * k] = g_cols.transpose(0, 3, 1, 4, 2, 5).reshape(n, c, ho * k, wo * k)
        else:
            for i in range(k):
                for j in range(k):
                    g_xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        g_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        g_x = g_xp[:, :, padding:padding + h, padding:padding + w] if padding else g_xp
        g_x = g_x[0] if squeeze else g_x
        g_bias = gmat.sum(axis=0) if bias is not None else None
        return (g_x, g_kernel, g_bias)

    inputs = (x, kernel, bias) if bias is not None else (x, kernel)
    return record(inputs, out, _backward)


# ---------------------------------------------------------------- reductions

def _check_nonempty(a: Tensor, what: str) -> None:
    if a.size == 0:
        raise ShapeError(f"{what} of an empty tensor")


def reduce_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    _check_nonempty(a, "sum")
    out = Tensor(np.asarray(a.data.sum(axis=axis)))

    def _backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return record((a,), out, _backward)


def reduce_mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    _check_nonempty(a, "mean")
    count = a.size if axis is None else a.shape[axis]
    out = Tensor(np.asarray(a.data.mean(axis=axis)))

    def _backward(g):
        if axis is None:
            return (np.full(a.shape, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy(),)

    return record((a,), out, _backward)


def l2norm(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Euclidean norm, stabilized so it is differentiable at zero.

    Evaluates ``sqrt(sum(a**2) + eps)`` with ``eps = 1e-20``: 1e-10 at a
    zero residual, indistinguishable from the true norm in float64 once the
    norm exceeds about 1e-2, and its gradient ``a / sqrt(sum(a**2) + eps)``
    is finite everywhere with magnitude at most 1.
    """
    _check_nonempty(a, "l2norm")
    root = np.sqrt(np.sum(a.data * a.data, axis=axis) + L2_EPS)
    out = Tensor(np.asarray(root))

    def _backward(g):
        if axis is None:
            return (a.data * (g / root),)
        return (a.data * np.expand_dims(g / root, axis),)

    return record((a,), out, _backward)


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "l2norm": l2norm}


def reduce(kind: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    try:
        fn = _REDUCE[kind]
    except KeyError:
        raise ValueError(f"unknown reduction {kind!r}") from None
    return fn(a, axis=axis)


# ---------------------------------------------------------------- structural

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of nothing")
    ref = tensors[0].shape
    ax = axis % len(ref) if ref else 0
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=ax))
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def _backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return record(tuple(tensors), out, _backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """``a[..., start:stop, ...]`` along one axis."""
    dim = a.shape[axis]
    if not (0 <= start < stop <= dim):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of size {dim}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(a.data[index].copy())

    def _backward(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return record((a,), out, _backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size or any(s < 0 for s in shape):
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    out = Tensor(a.data.reshape(shape).copy())
    return record((a,), out, lambda g: (g.reshape(a.shape),))


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows (axis 0); repeated indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
        raise ShapeError(f"take_rows: indices out of range for {a.shape[0]} rows")
    out = Tensor(a.data[idx])

    def _backward(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return record((a,), out, _backward)


def _pool_windows(x: Tensor, window: int, stride: int, padding: int, fill: float, what: str):
    xd, squeeze = _as_batch(x, what)
    if window < 1 or stride < 1 or padding < 0:
        raise ValueError(f"{what}: bad window/stride/padding {window}/{stride}/{padding}")
    n, c, h, w = xd.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if window > hp or window > wp:
        raise ShapeError(f"{what}: window {window} does not fit input {h}x{w} (padding {padding})")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=fill) if padding else xd
    win = sliding_window_view(xp, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    return xd, xp, win, squeeze


def max_pool2d(x: Tensor, window: int = 2, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Max pooling; gradient goes to the first (row-major) maximum of each window."""
    stride = window if stride is None else stride
    xd, xp, win, squeeze = _pool_windows(x, window, stride, padding, -np.inf, "max_pool2d")
    n, c, ho, wo = win.shape[:4]
    flat = win.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out = Tensor(y[0] if squeeze else y)

    # flat index of each chosen element in the padded input
    ri = (np.arange(ho) * stride)[:, None] + arg // window
    ci = (np.arange(wo) * stride)[None, :] + arg % window
    hp, wp = xp.shape[2], xp.shape[3]
    src = ri * wp + ci

    def _backward(g):
        g4 = g[None] if squeeze else g
        gp = np.zeros((n, c, hp * wp), dtype=DTYPE)
        base = np.arange(n * c)[:, None] * (hp * wp)
        np.add.at(gp.reshape(-1), (base + src.reshape(n * c, -1)).reshape(-1), g4.reshape(-1))
        gp = gp.reshape(n, c, hp, wp)
        gx = gp[:, :, padding:hp - padding, padding:wp - padding] if padding else gp
        return (gx[0] if squeeze else gx,)

    return record((x,), out, _backward)


def avg_pool2d(x: Tensor, window: int = 2, stride: Optional[int] = None) -> Tensor:
    stride = window if stride is None else stride
    xd, xp, win, squeeze = _pool_windows(x, window, stride, 0, 0.0, "avg_pool2d")
    n, c, ho, wo = win.shape[:4]
    y = win.mean(axis=(-2, -1))
    out = Tensor(y[0] if squeeze else y)
    area = float(window * window)

    def _backward(g):
        g4 = (g[None] if squeeze else g) / area
        gx = np.zeros(xd.shape, dtype=DTYPE)
        for i in range(window):
            for j in range(window):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g4
        return (gx[0] if squeeze else gx,)

    return record((x,), out, _backward)
