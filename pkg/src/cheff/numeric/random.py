from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from cheff.errors import ConfigError
from cheff.numeric.tensor import Tensor


ALGORITHM = "philox4x64-10"
_U64 = 1 << 64


@dataclass
class RngState:
    """Counter-based random stream: Philox 4x64 with 10 rounds.

    Draw ``k`` of a stream uses key ``seed`` and the 256-bit counter
    ``[0, counter, 0, 0]``; the generator walks the first word within the
    draw, so distinct counters never overlap. Every draw advances
    ``counter`` by one. A state is owned by one consumer at a time; use
    :meth:`fork` to hand streams to parallel work.
    """

    seed: int
    counter: int = 0
    algorithm: str = ALGORITHM

    def __post_init__(self) -> None:
        if not 0 <= self.seed < _U64:
            raise ConfigError(f"Seed must be an unsigned 64-bit value, got {self.seed}.")
        if not 0 <= self.counter < _U64:
            raise ConfigError(f"Counter must be an unsigned 64-bit value, got {self.counter}.")

    def generator(self) -> np.random.Generator:
        """Numpy generator for the next draw; advances the counter."""
        bit_generator = np.random.Philox(key=self.seed, counter=[0, self.counter, 0, 0])
        self.counter = (self.counter + 1) % _U64
        return np.random.Generator(bit_generator)

    def fork(self, index: int) -> "RngState":
        """Independent child stream derived from (seed, counter, index)."""
        words = np.random.SeedSequence([self.seed, self.counter, index]).generate_state(2, np.uint32)
        return RngState(seed=(int(words[0]) << 32) | int(words[1]))

    def copy(self) -> "RngState":
        return RngState(seed=self.seed, counter=self.counter)


def randn(rng: RngState, shape: Sequence[int], dtype: Any = np.float32) -> Tensor:
    """I.i.d. standard normal draws."""
    values = np.asarray(rng.generator().standard_normal(tuple(shape), dtype=np.float64))
    return Tensor.wrap(values.astype(dtype))


def randint(rng: RngState, low: int, high: int, size: int) -> np.ndarray:
    """Uniform integers in ``[low, high]`` inclusive."""
    return rng.generator().integers(low, high, size=size, endpoint=True)


def permutation(rng: RngState, n: int) -> np.ndarray:
    return rng.generator().permutation(n)
