from __future__ import annotations

import builtins
from collections.abc import Sequence
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cheff.errors import NumericError, ShapeError
from cheff.numeric.tensor import Tensor, apply


Axis = int | tuple[int, ...] | None


def lift(value: Any, like: Tensor | None = None) -> Tensor:
    """Turn a Python scalar or array into a constant tensor."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor.wrap(np.asarray(value, dtype=dtype if dtype is not None else np.float32))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_operands(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, lift(b, a)
    if isinstance(b, Tensor):
        return lift(a, b), b
    return lift(a), lift(b)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} do not broadcast.") from exc


# elementwise


def add(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape(a, b, "add")
    return apply(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape(a, b, "sub")
    return apply(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape(a, b, "mul")
    return apply(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    return apply(
        "div",
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return apply("neg", -x.data, (x,), lambda g: (-g,))


def power(x: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    return apply(
        "power",
        x.data**exponent,
        (x,),
        lambda g: (g * exponent * x.data ** (exponent - 1.0),),
    )


def square(x: Tensor) -> Tensor:
    return apply("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return apply("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return apply("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return apply("sqrt", out, (x,), lambda g: (0.5 * g / out,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return apply("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def silu(x: Tensor) -> Tensor:
    gate = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return apply(
        "silu",
        x.data * gate,
        (x,),
        lambda g: (g * gate * (1.0 + x.data * (1.0 - gate)),),
    )


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return apply("clip", np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


# reductions and shape


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return apply("sum", out, (x,), vjp)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    total = sum(x, axis=axis, keepdims=keepdims)
    count = x.size // builtins.max(total.size, 1)
    return mul(total, 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"Cannot reshape {list(x.shape)} into {list(shape)}.") from exc
    return apply("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return apply("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor.")
    try:
        out = np.concatenate([item.data for item in tensors], axis=axis)
    except ValueError as exc:
        shapes = [list(item.shape) for item in tensors]
        raise ShapeError(f"concat along axis {axis} failed for shapes {shapes}.") from exc
    offsets = np.cumsum([item.shape[axis] for item in tensors])[:-1]
    return apply("concat", out, tensors, lambda g: tuple(np.split(g, offsets, axis=axis)))


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    key = tuple(index)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(x.shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return apply("slice", x.data[key], (x,), vjp)


def gather_rows(table: Tensor, ids: Sequence[int] | np.ndarray) -> Tensor:
    """Embedding lookup: rows of a [V, d] table selected by integer ids."""
    index = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows expects a [V, d] table, got {list(table.shape)}.")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"Row ids out of range for a table with {table.shape[0]} rows.")

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return apply("gather_rows", table.data[index], (table,), vjp)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    return apply(
        "upsample_nearest",
        out,
        (x,),
        lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),),
    )


# linear algebra and network primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {list(a.shape)} and {list(b.shape)}.")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {list(a.shape)} @ {list(b.shape)}.")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch extents incompatible: {list(a.shape)} @ {list(b.shape)}.") from exc
    return apply(
        "matmul",
        np.matmul(a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape),
            _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape),
        ),
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericError("softmax received NaN input.")
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)
    return apply(
        "softmax",
        out,
        (x,),
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
    )


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D cross-correlation over NCHW input with a KCHW kernel."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and KCHW kernel, got {list(x.shape)} and {list(kernel.shape)}.")
    n, c, h, w = x.shape
    k, kc, kh, kw = kernel.shape
    if c != kc:
        raise ShapeError(f"conv2d channel mismatch: input {list(x.shape)} vs kernel {list(kernel.shape)}.")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel extents must be odd, got {list(kernel.shape)}.")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride} and {padding}.")
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d kernel {list(kernel.shape)} does not fit input {list(x.shape)}.")

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    out = np.tensordot(windows, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_kernel = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        columns = np.tensordot(g, kernel.data, axes=([1], [0]))
        grad_padded = np.zeros(padded.shape, dtype=np.result_type(g.dtype, kernel.dtype))
        for i in range(kh):
            for j in range(kw):
                grad_padded[
                    :,
                    :,
                    i : i + stride * out_h : stride,
                    j : j + stride * out_w : stride,
                ] += columns[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, padding : padding + h, padding : padding + w]
        return grad_x, grad_kernel

    return apply("conv2d", np.ascontiguousarray(out), (x, kernel), vjp)


def group_norm(x: Tensor, groups: int, gain: Any, bias: Any, eps: float = 1e-5) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"group_norm expects NCHW input, got {list(x.shape)}.")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ShapeError(f"group_norm: {c} channels are not divisible into {groups} groups.")
    grouped = reshape(x, (n, groups, (c // groups) * h * w))
    centered = sub(grouped, mean(grouped, axis=2, keepdims=True))
    variance = mean(square(centered), axis=2, keepdims=True)
    normed = reshape(div(centered, sqrt(add(variance, eps))), (n, c, h, w))
    gain = reshape(lift(gain, x), (1, c, 1, 1))
    bias = reshape(lift(bias, x), (1, c, 1, 1))
    return add(mul(normed, gain), bias)


def layer_norm(x: Tensor, gain: Any, bias: Any, eps: float = 1e-5) -> Tensor:
    centered = sub(x, mean(x, axis=-1, keepdims=True))
    variance = mean(square(centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(variance, eps)))
    return add(mul(normed, lift(gain, x)), lift(bias, x))


def mse(a: Tensor, b: Any) -> Tensor:
    return mean(square(sub(a, b)))
