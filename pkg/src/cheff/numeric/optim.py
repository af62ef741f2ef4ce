from __future__ import annotations

from collections.abc import Iterator, Mapping
from typing import Any

import numpy as np

from cheff.errors import ShapeError
from cheff.numeric.tensor import Tensor


class ParamSet:
    """Named trainable tensors plus Adam moment state.

    Parameters are immutable tensors; an optimizer step swaps in new
    tensors under the same names.
    """

    def __init__(self, tensors: Mapping[str, Any] | None = None, *, dtype: Any = None):
        self._params: dict[str, Tensor] = {}
        self.first_moments: dict[str, Tensor] = {}
        self.second_moments: dict[str, Tensor] = {}
        self.step = 0
        for name, value in (tensors or {}).items():
            self.add(name, value, dtype=dtype)

    def add(self, name: str, value: Any, *, dtype: Any = None) -> Tensor:
        if name in self._params:
            raise KeyError(f"Duplicate parameter: {name}")
        array = value.data if isinstance(value, Tensor) else np.asarray(value)
        tensor = Tensor(array, dtype=dtype, requires_grad=True)
        self._params[name] = tensor
        self.first_moments[name] = Tensor.wrap(np.zeros_like(tensor.data))
        self.second_moments[name] = Tensor.wrap(np.zeros_like(tensor.data))
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError as exc:
            raise KeyError(f"Unknown parameter: {name}") from exc

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def replace(self, name: str, value: Tensor) -> None:
        current = self[name]
        if value.shape != current.shape:
            raise ShapeError(f"Parameter {name}: shape {list(value.shape)} != {list(current.shape)}.")
        self._params[name] = Tensor.wrap(value.data, requires_grad=True)

    def astype(self, dtype: Any) -> "ParamSet":
        return ParamSet({name: tensor.data for name, tensor in self.items()}, dtype=dtype)

    def copy(self) -> "ParamSet":
        clone = ParamSet({name: tensor.data for name, tensor in self.items()})
        clone.first_moments = dict(self.first_moments)
        clone.second_moments = dict(self.second_moments)
        clone.step = self.step
        return clone

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.items()}

    def count(self) -> int:
        return sum(tensor.size for tensor in self._params.values())

    def equals(self, other: "ParamSet") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[name].data, other[name].data) for name in self)


def adam_step(
    params: ParamSet,
    grads: Mapping[str, Tensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamSet:
    """One bias-corrected Adam update; names missing from ``grads`` count as zero gradient."""
    for name, grad in grads.items():
        if name not in params:
            raise KeyError(f"Gradient for unknown parameter: {name}")
        if grad.shape != params[name].shape:
            raise ShapeError(
                f"Gradient for {name} has shape {list(grad.shape)}, parameter has {list(params[name].shape)}."
            )

    params.step += 1
    correction1 = 1.0 - beta1**params.step
    correction2 = 1.0 - beta2**params.step
    for name, tensor in params.items():
        grad = grads[name].data if name in grads else np.zeros_like(tensor.data)
        first = beta1 * params.first_moments[name].data + (1.0 - beta1) * grad
        second = beta2 * params.second_moments[name].data + (1.0 - beta2) * grad * grad
        update = lr * (first / correction1) / (np.sqrt(second / correction2) + eps)
        params.first_moments[name] = Tensor.wrap(first.astype(tensor.dtype))
        params.second_moments[name] = Tensor.wrap(second.astype(tensor.dtype))
        params.replace(name, Tensor.wrap((tensor.data - update).astype(tensor.dtype)))
    return params
