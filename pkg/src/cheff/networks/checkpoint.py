from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any

from cheff.artifacts import atomic_write_bytes
from cheff.errors import (
    CheckpointChecksumError,
    CheckpointKindError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    DataError,
)
from cheff.numeric.io import CODE_DTYPES, TENSOR_MAGIC, decode_tensor, encode_tensor
from cheff.numeric.optim import ParamSet
from cheff.numeric.tensor import Tensor


CHECKPOINT_MAGIC = b"CHKP1"
CHECKPOINT_VERSION = 1


class ModelKind(IntEnum):
    AE = 0
    SDM = 1
    SR = 2
    TXT = 3


@dataclass
class Checkpoint:
    kind: ModelKind
    config: dict[str, Any]
    params: ParamSet
    version: int = CHECKPOINT_VERSION
    path: Path | None = field(default=None, compare=False)


def save_checkpoint(checkpoint: Checkpoint) -> bytes:
    config_blob = json.dumps(checkpoint.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<IB", checkpoint.version, int(checkpoint.kind)),
        struct.pack("<I", len(config_blob)),
        config_blob,
        struct.pack("<I", len(checkpoint.params)),
    ]
    for name, tensor in checkpoint.params.items():
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(encode_tensor(tensor))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def load_checkpoint(buffer: bytes, expected_kind: ModelKind | None = None) -> Checkpoint:
    """Parse a CHKP1 blob.

    Checks run in order: magic, checksum, structure, version, kind. The CRC
    is verified before any length field is trusted, so a flipped byte
    anywhere in the body is a checksum error. A failing CRC is reported as
    truncation only when the bytes read as a cut-off prefix of a
    well-formed checkpoint.
    """
    if bytes(buffer[: len(CHECKPOINT_MAGIC)]) != CHECKPOINT_MAGIC:
        raise CheckpointMagicError("Not a CHKP1 checkpoint (bad magic).")
    if len(buffer) < _MIN_SIZE:
        raise CheckpointTruncatedError(f"Checkpoint is {len(buffer)} bytes, shorter than its fixed header.")
    body = memoryview(buffer)[:-4]
    (stored_crc,) = struct.unpack("<I", bytes(buffer[-4:]))
    if zlib.crc32(body) != stored_crc:
        if _reads_as_prefix(buffer):
            raise CheckpointTruncatedError(f"Checkpoint ends early after {len(buffer)} bytes.")
        raise CheckpointChecksumError("Checkpoint checksum mismatch; the file is corrupt.")

    reader = _Reader(body, len(CHECKPOINT_MAGIC))
    version, kind_code, config_blob, entries = _parse_body(reader)
    if reader.offset != len(body):
        raise CheckpointTruncatedError(f"Checkpoint has {len(body) - reader.offset} unexpected bytes before its checksum.")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"Unsupported checkpoint version {version}; expected {CHECKPOINT_VERSION}.")
    try:
        kind = ModelKind(kind_code)
    except ValueError as exc:
        raise CheckpointKindError(f"Unknown model kind code {kind_code}.") from exc
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointKindError(f"Checkpoint holds a {kind.name} model, expected {expected_kind.name}.")

    try:
        config = json.loads(config_blob.decode("utf-8"))
        names = [name.decode("utf-8") for name, _ in entries]
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointTruncatedError(f"Checkpoint header is malformed: {exc}") from exc
    params = ParamSet({name: tensor for name, (_, tensor) in zip(names, entries)})
    return Checkpoint(kind=kind, config=config, params=params, version=version)


# magic, version, kind, config length, entry count, CRC
_MIN_SIZE = len(CHECKPOINT_MAGIC) + 5 + 4 + 4 + 4


def _parse_body(reader: _Reader) -> tuple[int, int, bytes, list[tuple[bytes, Tensor]]]:
    version, kind_code = reader.unpack("<IB")
    (config_len,) = reader.unpack("<I")
    config_blob = reader.take(config_len)
    (count,) = reader.unpack("<I")
    entries = []
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len)
        entries.append((name, reader.tensor()))
    return version, kind_code, config_blob, entries


def _reads_as_prefix(buffer: bytes) -> bool:
    """Whether ``buffer`` (CRC bytes included) is a cut-off start of a well-formed checkpoint.

    True when the walk runs out of bytes while every declared size still
    fits in the file, or when it completes with no room left for the CRC.
    """
    reader = _Reader(memoryview(buffer), len(CHECKPOINT_MAGIC))
    try:
        _parse_body(reader)
    except CheckpointTruncatedError:
        return not reader.implausible
    return reader.offset == len(buffer)


class _Reader:
    def __init__(self, view: memoryview, offset: int):
        self.view = view
        self.offset = offset
        self.implausible = False

    def _need(self, size: int) -> None:
        if self.offset + size > len(self.view):
            self.implausible = size > len(self.view)
            raise CheckpointTruncatedError(f"Checkpoint truncated at byte {self.offset}.")

    def unpack(self, fmt: str) -> tuple[int, ...]:
        size = struct.calcsize(fmt)
        self._need(size)
        values = struct.unpack_from(fmt, self.view, self.offset)
        self.offset += size
        return values

    def take(self, size: int) -> bytes:
        self._need(size)
        chunk = bytes(self.view[self.offset : self.offset + size])
        self.offset += size
        return chunk

    def tensor(self) -> Tensor:
        start = self.offset
        magic = self.take(len(TENSOR_MAGIC))
        (rank,) = self.unpack("<I")
        shape = self.unpack(f"<{rank}Q")
        (code,) = self.unpack("<B")
        if magic != TENSOR_MAGIC or code not in CODE_DTYPES:
            self.implausible = True
            raise CheckpointTruncatedError(f"Checkpoint tensor block at byte {start} is damaged.")
        self._need(math.prod(shape) * CODE_DTYPES[code].itemsize)
        tensor, self.offset = decode_tensor(self.view, start)
        return tensor


def write_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    target = atomic_write_bytes(path, save_checkpoint(checkpoint))
    checkpoint.path = target
    return target


def read_checkpoint(path: str | Path, expected_kind: ModelKind | None = None) -> Checkpoint:
    target = Path(path)
    try:
        buffer = target.read_bytes()
    except OSError as exc:
        raise DataError(f"Cannot read checkpoint {target}: {exc.strerror}") from exc
    checkpoint = load_checkpoint(buffer, expected_kind)
    checkpoint.path = target
    return checkpoint
