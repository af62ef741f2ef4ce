from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from cheff.artifacts import atomic_write_bytes
from cheff.errors import DataError
from cheff.numeric.tensor import Tensor


TENSOR_MAGIC = b"CTNSR1"
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


def encode_tensor(tensor: Tensor) -> bytes:
    header = TENSOR_MAGIC + struct.pack("<I", tensor.ndim)
    header += struct.pack(f"<{tensor.ndim}Q", *tensor.shape)
    header += struct.pack("<B", DTYPE_CODES[tensor.dtype])
    payload = np.ascontiguousarray(tensor.data, dtype=tensor.dtype.newbyteorder("<")).tobytes()
    return header + payload


def decode_tensor(buffer: bytes | memoryview, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one CTNSR1 block at ``offset``; returns the tensor and the offset after it."""
    view = memoryview(buffer)
    end = offset + len(TENSOR_MAGIC)
    if bytes(view[offset:end]) != TENSOR_MAGIC:
        raise DataError(f"Bad tensor magic at byte {offset}.")
    rank = _unpack("<I", view, end)[0]
    end += 4
    shape = _unpack(f"<{rank}Q", view, end)
    end += 8 * rank
    code = _unpack("<B", view, end)[0]
    end += 1
    if code not in CODE_DTYPES:
        raise DataError(f"Unknown tensor dtype code {code}.")
    dtype = CODE_DTYPES[code].newbyteorder("<")
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    nbytes = count * dtype.itemsize
    if end + nbytes > len(view):
        raise DataError(f"Tensor payload truncated: need {nbytes} bytes at {end}, have {len(view) - end}.")
    array = np.frombuffer(view[end : end + nbytes], dtype=dtype).astype(CODE_DTYPES[code]).reshape(shape)
    return Tensor.wrap(array), end + nbytes


def _unpack(fmt: str, view: memoryview, offset: int) -> tuple[int, ...]:
    size = struct.calcsize(fmt)
    if offset + size > len(view):
        raise DataError(f"Tensor header truncated at byte {offset}.")
    return struct.unpack_from(fmt, view, offset)


def save_tensor(path: str | Path, tensor: Tensor) -> Path:
    return atomic_write_bytes(path, encode_tensor(tensor))


def load_tensor(path: str | Path) -> Tensor:
    target = Path(path)
    try:
        buffer = target.read_bytes()
    except OSError as exc:
        raise DataError(f"Cannot read tensor file {target}: {exc.strerror}") from exc
    tensor, end = decode_tensor(buffer)
    if end != len(buffer):
        raise DataError(f"Trailing bytes after tensor in {target}.")
    return tensor
