from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from cheff.artifacts import atomic_write_bytes
from cheff.errors import DataError, ShapeError
from cheff.numeric import ops
from cheff.numeric.resize import bicubic_resize
from cheff.numeric.tensor import Tensor


_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def decode_pgm(buffer: bytes, name: str = "<bytes>") -> np.ndarray:
    """Binary PGM (P5) to a float64 ``[H, W]`` array in [0, 1]."""
    match = _PGM_HEADER.match(buffer)
    if match is None:
        raise DataError(f"{name}: not a binary PGM (P5) image.")
    width, height, maxval = (int(group) for group in match.groups())
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise DataError(f"{name}: invalid PGM geometry {width}x{height} maxval {maxval}.")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    start = match.end()
    nbytes = width * height * dtype.itemsize
    if len(buffer) < start + nbytes:
        raise DataError(f"{name}: PGM pixel data truncated ({len(buffer) - start} of {nbytes} bytes).")
    pixels = np.frombuffer(buffer, dtype=dtype, count=width * height, offset=start)
    return pixels.reshape(height, width).astype(np.float64) / maxval


def encode_pgm(image: np.ndarray, bits: int = 8) -> bytes:
    """``[H, W]`` array in [0, 1] to P5 bytes; values are clipped and rounded."""
    if bits not in (8, 16):
        raise ShapeError(f"PGM depth must be 8 or 16 bits, got {bits}.")
    array = np.asarray(image, dtype=np.float64)
    if array.ndim != 2:
        raise ShapeError(f"PGM images are 2-D, got shape {list(array.shape)}.")
    maxval = 255 if bits == 8 else 65535
    levels = np.rint(np.clip(array, 0.0, 1.0) * maxval)
    payload = levels.astype(np.dtype("u1") if bits == 8 else np.dtype(">u2")).tobytes()
    height, width = array.shape
    return f"P5\n{width} {height}\n{maxval}\n".encode("ascii") + payload


def read_pgm(path: str | Path) -> np.ndarray:
    target = Path(path)
    try:
        buffer = target.read_bytes()
    except OSError as exc:
        raise DataError(f"Cannot read image {target}: {exc.strerror}") from exc
    return decode_pgm(buffer, str(target))


def write_pgm(path: str | Path, image: np.ndarray, bits: int = 8) -> Path:
    return atomic_write_bytes(path, encode_pgm(image, bits))


def to_model_range(image: np.ndarray, dtype: np.dtype | type = np.float32) -> np.ndarray:
    """[0, 1] -> [-1, 1]."""
    return (np.asarray(image, dtype=np.float64) * 2.0 - 1.0).astype(dtype)


def from_model_range(image: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 1], clipped."""
    return np.clip((np.asarray(image, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def standardized_size(height: int, width: int, target: int) -> tuple[int, int]:
    """Size after scaling the shortest edge to ``target``, rounding the other half up."""
    if height < 1 or width < 1 or target < 1:
        raise ShapeError(f"Invalid geometry {height}x{width} -> {target}.")
    short = min(height, width)
    if height <= width:
        return target, (2 * width * target + short) // (2 * short)
    return (2 * height * target + short) // (2 * short), target


def standardize_image(image: Tensor, target: int) -> Tensor:
    """Resize so the shortest edge meets ``target``, then center crop to ``target x target``.

    An odd crop surplus drops the extra row or column from the trailing side.
    No histogram equalization is applied.
    """
    if image.ndim != 3:
        raise ShapeError(f"standardize_image expects [C, H, W], got {list(image.shape)}.")
    channels, height, width = image.shape
    new_h, new_w = standardized_size(height, width, target)
    batch = ops.reshape(image, (1, channels, height, width))
    resized = bicubic_resize(batch, new_h, new_w)
    top = (new_h - target) // 2
    left = (new_w - target) // 2
    cropped = ops.slice_axis(ops.slice_axis(resized, 2, top, top + target), 3, left, left + target)
    return ops.reshape(cropped, (channels, target, target))


def load_image(path: str | Path, size: int | None = None, dtype: np.dtype | type = np.float32) -> np.ndarray:
    """PGM file to a model-range ``[1, size, size]`` array."""
    pixels = read_pgm(path)
    image = Tensor(pixels[None], dtype=np.float64)
    if size is not None and pixels.shape != (size, size):
        image = standardize_image(image, size)
    return to_model_range(image.data, dtype)


def save_image(path: str | Path, image: np.ndarray, bits: int = 8) -> Path:
    """Model-range ``[1, H, W]`` or ``[H, W]`` array to PGM."""
    array = np.asarray(image)
    if array.ndim == 3:
        if array.shape[0] != 1:
            raise ShapeError(f"Only single-channel images are written as PGM, got {list(array.shape)}.")
        array = array[0]
    return write_pgm(path, from_model_range(array), bits)
