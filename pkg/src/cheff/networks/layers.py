from __future__ import annotations

import math
from typing import Any

import numpy as np

from cheff.errors import ShapeError
from cheff.numeric import ops
from cheff.numeric.optim import ParamSet
from cheff.numeric.random import RngState
from cheff.numeric.tensor import Tensor


class Initializer:
    """Creates named parameters: fan-in scaled uniform weights, zero biases."""

    def __init__(self, rng: RngState, dtype: Any = np.float32):
        self.params = ParamSet()
        self.rng = rng
        self.dtype = np.dtype(dtype)

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = math.sqrt(6.0 / fan_in)
        values = self.rng.generator().uniform(-bound, bound, size=shape)
        return self.params.add(name, values, dtype=self.dtype)

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.params.add(name, np.zeros(shape), dtype=self.dtype)

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.params.add(name, np.ones(shape), dtype=self.dtype)

    def linear(self, prefix: str, in_features: int, out_features: int) -> None:
        self.uniform(f"{prefix}.weight", (out_features, in_features), in_features)
        self.zeros(f"{prefix}.bias", (out_features,))

    def conv(self, prefix: str, in_channels: int, out_channels: int, kernel: int = 3, *, zero: bool = False) -> None:
        shape = (out_channels, in_channels, kernel, kernel)
        if zero:
            self.zeros(f"{prefix}.weight", shape)
        else:
            self.uniform(f"{prefix}.weight", shape, in_channels * kernel * kernel)
        self.zeros(f"{prefix}.bias", (out_channels,))

    def norm(self, prefix: str, channels: int) -> None:
        self.ones(f"{prefix}.gain", (channels,))
        self.zeros(f"{prefix}.bias", (channels,))

    def resblock(self, prefix: str, in_channels: int, out_channels: int, time_dim: int | None) -> None:
        self.norm(f"{prefix}.norm1", in_channels)
        self.conv(f"{prefix}.conv1", in_channels, out_channels)
        if time_dim is not None:
            self.linear(f"{prefix}.time", time_dim, out_channels)
        self.norm(f"{prefix}.norm2", out_channels)
        self.conv(f"{prefix}.conv2", out_channels, out_channels)
        if in_channels != out_channels:
            self.conv(f"{prefix}.skip", in_channels, out_channels, kernel=1)

    def attention(self, prefix: str, channels: int, context_dim: int | None = None) -> None:
        source = channels if context_dim is None else context_dim
        self.uniform(f"{prefix}.q", (channels, channels), channels)
        self.uniform(f"{prefix}.k", (channels, source), source)
        self.uniform(f"{prefix}.v", (channels, source), source)
        self.linear(f"{prefix}.out", channels, channels)

    def spatial_attention(self, prefix: str, channels: int, context_dim: int | None) -> None:
        self.norm(f"{prefix}.norm", channels)
        self.attention(f"{prefix}.self", channels)
        if context_dim is not None:
            self.norm(f"{prefix}.cross_norm", channels)
            self.attention(f"{prefix}.cross", channels, context_dim)


def norm_groups(channels: int) -> int:
    return math.gcd(channels, 8)


def sinusoidal_embedding(t: int | np.ndarray, dim: int, dtype: Any = np.float32) -> Tensor:
    """``[sin(t w_k), cos(t w_k)]`` with ``w_k = 10000^(-2k/dim)``.

    A scalar ``t`` yields shape ``[dim]``; an array of timesteps yields
    ``[len(t), dim]``.
    """
    if dim < 2 or dim % 2:
        raise ShapeError(f"Sinusoidal embedding needs an even dimension, got {dim}.")
    steps = np.asarray(t, dtype=np.float64)
    if np.any(steps < 0):
        raise ShapeError("Timesteps for the sinusoidal embedding must be >= 0.")
    frequencies = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    angles = steps[..., None] * frequencies
    return Tensor.wrap(np.concatenate([np.sin(angles), np.cos(angles)], axis=-1).astype(dtype))


def linear(params: ParamSet, prefix: str, x: Tensor) -> Tensor:
    return ops.add(ops.matmul(x, ops.swap_last(params[f"{prefix}.weight"])), params[f"{prefix}.bias"])


def conv(params: ParamSet, prefix: str, x: Tensor, stride: int = 1) -> Tensor:
    weight = params[f"{prefix}.weight"]
    out = ops.conv2d(x, weight, stride=stride, padding=weight.shape[-1] // 2)
    return ops.add(out, ops.reshape(params[f"{prefix}.bias"], (1, weight.shape[0], 1, 1)))


def norm(params: ParamSet, prefix: str, x: Tensor) -> Tensor:
    return ops.group_norm(x, norm_groups(x.shape[1]), params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def resblock(params: ParamSet, prefix: str, x: Tensor, time: Tensor | None = None) -> Tensor:
    h = conv(params, f"{prefix}.conv1", ops.silu(norm(params, f"{prefix}.norm1", x)))
    if time is not None:
        shift = linear(params, f"{prefix}.time", ops.silu(time))
        h = ops.add(h, ops.reshape(shift, (shift.shape[0], shift.shape[1], 1, 1)))
    h = conv(params, f"{prefix}.conv2", ops.silu(norm(params, f"{prefix}.norm2", h)))
    skip = conv(params, f"{prefix}.skip", x) if f"{prefix}.skip.weight" in params else x
    return ops.add(skip, h)


def cross_attention(
    features: Tensor,
    cond: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    heads: int = 1,
) -> Tensor:
    """``softmax(Q K^T / sqrt(d_k)) V`` with queries from features, keys and values from cond.

    ``features`` is ``[M, d_e]`` or ``[B, M, d_e]``; ``cond`` is ``[L, d_tau]``
    or ``[B, L, d_tau]``. Weights follow the ``[d_out, d_in]`` layout
    (``W_Q: d_q x d_e``, ``W_K: d_k x d_tau``, ``W_V: d_v x d_tau``).
    """
    if w_q.ndim != 2 or w_k.ndim != 2 or w_v.ndim != 2:
        raise ShapeError("Attention projections must be matrices.")
    if w_q.shape[1] != features.shape[-1]:
        raise ShapeError(f"W_Q {list(w_q.shape)} does not match features {list(features.shape)}.")
    if w_k.shape[1] != cond.shape[-1] or w_v.shape[1] != cond.shape[-1]:
        raise ShapeError(f"W_K/W_V {list(w_k.shape)}/{list(w_v.shape)} do not match cond {list(cond.shape)}.")
    if w_q.shape[0] != w_k.shape[0]:
        raise ShapeError(f"d_q ({w_q.shape[0]}) must equal d_k ({w_k.shape[0]}).")
    d_k, d_v = w_k.shape[0], w_v.shape[0]
    if d_k % heads or d_v % heads:
        raise ShapeError(f"{heads} heads do not divide d_k={d_k}, d_v={d_v}.")

    single = features.ndim == 2
    if single:
        features = ops.reshape(features, (1, *features.shape))
    if cond.ndim == 2:
        cond = ops.reshape(cond, (1, *cond.shape))

    q = ops.matmul(features, ops.swap_last(w_q))
    k = ops.matmul(cond, ops.swap_last(w_k))
    v = ops.matmul(cond, ops.swap_last(w_v))
    q = ops.transpose(ops.reshape(q, (q.shape[0], q.shape[1], heads, d_k // heads)), (0, 2, 1, 3))
    k = ops.transpose(ops.reshape(k, (k.shape[0], k.shape[1], heads, d_k // heads)), (0, 2, 3, 1))
    v = ops.transpose(ops.reshape(v, (v.shape[0], v.shape[1], heads, d_v // heads)), (0, 2, 1, 3))

    weights = ops.softmax(ops.mul(ops.matmul(q, k), 1.0 / math.sqrt(d_k // heads)), axis=-1)
    out = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
    out = ops.reshape(out, (out.shape[0], out.shape[1], d_v))
    if single:
        out = ops.reshape(out, out.shape[1:])
    return out


def attention(params: ParamSet, prefix: str, tokens: Tensor, context: Tensor, heads: int) -> Tensor:
    out = cross_attention(tokens, context, params[f"{prefix}.q"], params[f"{prefix}.k"], params[f"{prefix}.v"], heads)
    return linear(params, f"{prefix}.out", out)


def spatial_attention(
    params: ParamSet,
    prefix: str,
    x: Tensor,
    heads: int,
    context: Tensor | None = None,
    cross_heads: int | None = None,
) -> Tensor:
    """Self-attention over pixels with ``heads`` heads, then cross-attention to ``context`` when the block has it.

    Cross-attention uses ``cross_heads`` (default ``heads``).
    """
    n, c, h, w = x.shape

    def to_tokens(value: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(value, (n, c, h * w)), (0, 2, 1))

    def to_image(value: Tensor) -> Tensor:
        return ops.reshape(ops.transpose(value, (0, 2, 1)), (n, c, h, w))

    tokens = to_tokens(norm(params, f"{prefix}.norm", x))
    x = ops.add(x, to_image(attention(params, f"{prefix}.self", tokens, tokens, heads)))
    if context is not None and f"{prefix}.cross.q" in params:
        tokens = to_tokens(norm(params, f"{prefix}.cross_norm", x))
        x = ops.add(x, to_image(attention(params, f"{prefix}.cross", tokens, context, cross_heads or heads)))
    return x
