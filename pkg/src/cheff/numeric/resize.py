from __future__ import annotations

from functools import lru_cache

import numpy as np

from cheff.errors import ShapeError
from cheff.numeric import ops
from cheff.numeric.tensor import Tensor


CUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel; a = -0.5 is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    far = ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


@lru_cache(maxsize=64)
def resize_weights(in_size: int, out_size: int) -> np.ndarray:
    """Row-stochastic [out_size, in_size] interpolation matrix.

    Output sample ``i`` sits at source coordinate ``(i + 0.5) / scale - 0.5``
    and mixes the two Catmull-Rom taps on either side of it.
    Taps outside the image are clamped to the nearest edge pixel.
    """
    if in_size < 1 or out_size < 1:
        raise ShapeError(f"Resize extents must be >= 1, got {in_size} -> {out_size}.")
    scale = out_size / in_size
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    for i in range(out_size):
        center = (i + 0.5) / scale - 0.5
        taps = np.arange(int(np.floor(center)) - 1, int(np.floor(center)) + 3)
        np.add.at(weights[i], np.clip(taps, 0, in_size - 1), cubic_kernel(taps - center))
    weights /= weights.sum(axis=1, keepdims=True)
    weights.flags.writeable = False
    return weights


def bicubic_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bicubic resize of an NCHW tensor; differentiable in ``x``."""
    if x.ndim != 4:
        raise ShapeError(f"bicubic_resize expects NCHW input, got {list(x.shape)}.")
    _, _, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x
    rows = Tensor.wrap(resize_weights(h, out_h).astype(x.dtype))
    cols = Tensor.wrap(resize_weights(w, out_w).T.astype(x.dtype))
    return ops.matmul(ops.matmul(rows, x), cols)
