from cheff.numeric.optim import ParamSet, adam_step
from cheff.numeric.random import RngState, randn
from cheff.numeric.resize import bicubic_resize
from cheff.numeric.tensor import Graph, Tensor, backward

__all__ = [
    "Graph",
    "ParamSet",
    "RngState",
    "Tensor",
    "adam_step",
    "backward",
    "bicubic_resize",
    "randn",
]
