from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from cheff.errors import ConfigError

if TYPE_CHECKING:
    from cheff.config import ScheduleSettings


DEFAULT_DIAGNOSTIC_THRESHOLD = 1e-5
COSINE_OFFSET = 0.008
MAX_BETA = 0.999


class ScheduleKind(StrEnum):
    linear = "linear"
    cosine = "cosine"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Forward-process variances, 1-based in ``t`` (index ``t - 1`` in the arrays)."""

    kind: ScheduleKind
    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("A schedule needs at least one timestep.")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ConfigError("Every beta must lie strictly between 0 and 1.")
        betas.flags.writeable = False
        alpha_bars = np.cumprod(1.0 - betas)
        alpha_bars.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def timesteps(self) -> int:
        return int(self.betas.size)

    def check_t(self, t: int) -> int:
        if not 1 <= int(t) <= self.timesteps:
            raise ConfigError(f"Timestep {t} outside 1..{self.timesteps}.")
        return int(t)

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction; ``alpha_bar(0)`` is defined as 1."""
        if int(t) == 0:
            return 1.0
        return float(self.alpha_bars[self.check_t(t) - 1])

    def beta_tilde(self, t: int) -> float:
        """Posterior variance ``(1 - abar_{t-1}) / (1 - abar_t) * beta_t``."""
        return (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)


@dataclass(frozen=True)
class DdimPlan:
    subsequence: tuple[int, ...]
    eta: float = 0.0

    def __post_init__(self) -> None:
        steps = self.subsequence
        if not steps or steps[0] < 1 or any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError(f"DDIM subsequence must be strictly increasing from >= 1: {steps[:5]}...")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"DDIM eta must lie in [0, 1], got {self.eta}.")


@dataclass(frozen=True)
class TerminalDiagnostic:
    alpha_bar_T: float
    residual_signal: float
    sufficient: bool
    threshold: float


def linear_schedule(beta_start: float, beta_end: float, timesteps: int) -> NoiseSchedule:
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"Linear schedule needs 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}.")
    if timesteps < 1:
        raise ConfigError(f"Schedule needs T >= 1, got {timesteps}.")
    return NoiseSchedule(ScheduleKind.linear, np.linspace(beta_start, beta_end, timesteps, dtype=np.float64))


def cosine_schedule(timesteps: int, s: float = COSINE_OFFSET) -> NoiseSchedule:
    if timesteps < 1:
        raise ConfigError(f"Schedule needs T >= 1, got {timesteps}.")
    steps = np.arange(timesteps + 1, dtype=np.float64)
    f = np.cos(((steps / timesteps + s) / (1.0 + s)) * math.pi / 2.0) ** 2
    betas = np.minimum(1.0 - f[1:] / f[:-1], MAX_BETA)
    return NoiseSchedule(ScheduleKind.cosine, betas)


def make_schedule(settings: "ScheduleSettings") -> NoiseSchedule:
    if settings.kind == ScheduleKind.linear:
        return linear_schedule(settings.beta_start, settings.beta_end, settings.timesteps)
    return cosine_schedule(settings.timesteps, settings.cosine_offset)


def terminal_diagnostic(
    schedule: NoiseSchedule,
    threshold: float = DEFAULT_DIAGNOSTIC_THRESHOLD,
) -> TerminalDiagnostic:
    alpha_bar_T = float(schedule.alpha_bars[-1])
    return TerminalDiagnostic(
        alpha_bar_T=alpha_bar_T,
        residual_signal=math.sqrt(alpha_bar_T),
        sufficient=alpha_bar_T < threshold,
        threshold=threshold,
    )


def ddim_subsequence(timesteps: int, steps: int, eta: float = 0.0) -> DdimPlan:
    """Evenly spaced timesteps ``round(i * T / steps)`` for ``i = 1..steps``, ending at T."""
    if not 1 <= steps <= timesteps:
        raise ConfigError(f"DDIM needs 1 <= steps <= T, got steps={steps}, T={timesteps}.")
    # round half up in integer arithmetic
    indices = [(2 * i * timesteps + steps) // (2 * steps) for i in range(1, steps + 1)]
    return DdimPlan(subsequence=tuple(dict.fromkeys(indices)), eta=eta)


def schedule_report(schedule: NoiseSchedule, diagnostic: TerminalDiagnostic) -> list[tuple[str, str]]:
    return [
        ("kind", schedule.kind.value),
        ("T", str(schedule.timesteps)),
        ("beta_start", repr(float(schedule.betas[0]))),
        ("beta_end", repr(float(schedule.betas[-1]))),
        ("alpha_bar_T", f"{diagnostic.alpha_bar_T:.6e}"),
        ("residual_signal", f"{diagnostic.residual_signal:.6e}"),
        ("sufficient", str(diagnostic.sufficient).lower()),
    ]
