from __future__ import annotations


class CheffError(Exception):
    code = "cheff"
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def render(self) -> str:
        detail = " ".join(self.detail.split())
        return f"error: {self.code}: {detail}"


class ConfigError(CheffError, ValueError):
    code = "config"
    exit_code = 2


class ShapeError(CheffError, ValueError):
    code = "shape"
    exit_code = 2


class DataError(CheffError, ValueError):
    code = "io"
    exit_code = 3


class CheckpointError(CheffError, ValueError):
    code = "checkpoint"
    exit_code = 4


class CheckpointMagicError(CheckpointError):
    code = "checkpoint-magic"


class CheckpointTruncatedError(CheckpointError):
    code = "checkpoint-truncated"


class CheckpointChecksumError(CheckpointError):
    code = "checkpoint-checksum"


class CheckpointKindError(CheckpointError):
    code = "checkpoint-kind"


class CheckpointVersionError(CheckpointError):
    code = "checkpoint-version"


class NumericError(CheffError, ArithmeticError):
    code = "numeric"
    exit_code = 5
