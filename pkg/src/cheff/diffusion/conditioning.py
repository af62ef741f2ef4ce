from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from typing import Protocol

import numpy as np

from cheff.errors import NumericError, ShapeError
from cheff.numeric.tensor import Tensor


class ConditioningKind(StrEnum):
    none = "none"
    embedding = "embedding"
    concat_image = "concat_image"


@dataclass(frozen=True)
class Conditioning:
    kind: ConditioningKind = ConditioningKind.none
    tensor: Tensor | None = None

    def __post_init__(self) -> None:
        if self.kind == ConditioningKind.none:
            if self.tensor is not None:
                raise ShapeError("Unconditional input must not carry a tensor.")
            return
        if self.tensor is None:
            raise ShapeError(f"{self.kind.value} conditioning needs a tensor.")
        if self.kind == ConditioningKind.embedding:
            if self.tensor.ndim not in (2, 3):
                raise ShapeError(f"Embedding conditioning must be [L, d] or [N, L, d], got {list(self.tensor.shape)}.")
            if not np.isfinite(self.tensor.data).all():
                raise NumericError("Embedding conditioning contains non-finite values.")
        elif self.tensor.ndim != 4:
            raise ShapeError(f"Image conditioning must be NCHW, got {list(self.tensor.shape)}.")

    @classmethod
    def embedding(cls, tensor: Tensor) -> "Conditioning":
        return cls(ConditioningKind.embedding, tensor)

    @classmethod
    def concat_image(cls, tensor: Tensor) -> "Conditioning":
        return cls(ConditioningKind.concat_image, tensor)

    def select(self, index: np.ndarray) -> "Conditioning":
        """Rows of a batched conditioning; unbatched embeddings are shared."""
        if self.tensor is None or (self.kind == ConditioningKind.embedding and self.tensor.ndim == 2):
            return self
        return Conditioning(self.kind, Tensor.wrap(self.tensor.data[np.asarray(index)]))


NO_CONDITIONING = Conditioning()


class Denoiser(Protocol):
    """Noise predictor: ``eps_hat = denoiser(x_t, t, cond)`` with ``eps_hat.shape == x_t.shape``.

    ``t`` is either one timestep for the whole batch or one per sample.
    """

    def __call__(self, x_t: Tensor, t: int | np.ndarray, cond: Conditioning) -> Tensor: ...
