from __future__ import annotations

import threading
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np

from cheff.errors import ShapeError

if TYPE_CHECKING:
    from cheff.numeric.optim import ParamSet


SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

VectorJacobian = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """Immutable dense array with an optional gradient requirement.

    The buffer is a read-only ``numpy.ndarray``; every operation returns a
    new tensor and, inside an active :class:`Graph`, records how to pull
    gradients back to its inputs.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data: Any, dtype: Any = None, *, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        array = np.array(data, dtype=dtype, copy=True)
        if dtype is None and array.dtype not in SUPPORTED_DTYPES:
            array = array.astype(np.float32)
        _validate_array(array)
        array.flags.writeable = False
        self.data = array
        self.requires_grad = requires_grad

    @classmethod
    def wrap(cls, array: np.ndarray, *, requires_grad: bool = False) -> "Tensor":
        """Adopt an owned array without copying it."""
        tensor = cls.__new__(cls)
        if array.dtype not in SUPPORTED_DTYPES:
            array = array.astype(np.float32)
        _validate_array(array)
        array.flags.writeable = False
        tensor.data = array
        tensor.requires_grad = requires_grad
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"Tensor of shape {list(self.shape)} is not a scalar.")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def astype(self, dtype: Any) -> "Tensor":
        return Tensor.wrap(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def __neg__(self) -> "Tensor":
        return ops.neg(self)

    def __add__(self, other: Any) -> "Tensor":
        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return ops.div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return ops.div(other, self)

    def __pow__(self, exponent: float) -> "Tensor":
        return ops.power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return ops.matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        return ops.mean(self, axis=axis, keepdims=keepdims)


def _validate_array(array: np.ndarray) -> None:
    if array.dtype not in SUPPORTED_DTYPES:
        raise ShapeError(f"Unsupported dtype {array.dtype}; expected float32 or float64.")
    if any(extent < 1 for extent in array.shape):
        raise ShapeError(f"Tensor extents must be >= 1, got {list(array.shape)}.")


@dataclass(slots=True)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: VectorJacobian


class Graph:
    """Operation trace for one forward evaluation.

    Use as a context manager; operations on tensors that require gradients
    append a :class:`Node` while the graph is active on the current thread.
    Nodes are appended in execution order, so the trace is topologically
    sorted by construction.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def _graph_stack() -> list[Graph]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_graph() -> Graph | None:
    stack = _graph_stack()
    return stack[-1] if stack else None


def apply(op: str, output: np.ndarray, inputs: Iterable[Tensor], vjp: VectorJacobian) -> Tensor:
    inputs = tuple(inputs)
    requires_grad = any(item.requires_grad for item in inputs)
    result = Tensor.wrap(output, requires_grad=requires_grad)
    if requires_grad:
        graph = active_graph()
        if graph is not None:
            graph.record(Node(op=op, inputs=inputs, output=result, vjp=vjp))
    return result


def backward(
    graph: Graph,
    loss: Tensor,
    params: "ParamSet | Mapping[str, Tensor]",
) -> dict[str, Tensor]:
    """Reverse-mode sweep over ``graph`` from a scalar ``loss``.

    Returns one gradient per named parameter; parameters the loss does not
    reach receive zeros of their own shape.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {list(loss.shape)}.")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        upstream = pending.pop(id(node.output), None)
        if upstream is None:
            continue
        for tensor, grad in zip(node.inputs, node.vjp(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + grad
            else:
                pending[key] = grad

    gradients: dict[str, Tensor] = {}
    for name, tensor in params.items():
        grad = pending.get(id(tensor))
        if grad is None:
            grad = np.zeros_like(tensor.data)
        gradients[name] = Tensor.wrap(np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape))
    return gradients


from cheff.numeric import ops  # noqa: E402  (operator overloads dispatch here)
