from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from cheff.diffusion.conditioning import Conditioning, Denoiser, NO_CONDITIONING
from cheff.diffusion.forward import predict_x0
from cheff.errors import ConfigError, ShapeError
from cheff.numeric import ops
from cheff.numeric.random import RngState, randn
from cheff.numeric.tensor import Tensor
from cheff.schedules import DdimPlan, NoiseSchedule, ddim_subsequence


class SamplerKind(StrEnum):
    ddpm = "ddpm"
    ddim = "ddim"


class SigmaChoice(StrEnum):
    beta = "beta"
    beta_tilde = "beta_tilde"


# Per-step noise for the step that starts at the given timestep; None means zero.
NoiseProvider = Callable[[int], Tensor | None]
# Called with the state after each step and the timestep it belongs to (0 for the final image).
StepHook = Callable[[Tensor, int], Tensor]
ProgressCallback = Callable[[int, int], None]


@dataclass(frozen=True)
class SamplerConfig:
    kind: SamplerKind = SamplerKind.ddim
    sigma_choice: SigmaChoice = SigmaChoice.beta_tilde
    plan: DdimPlan | None = None
    clip_x0: bool = True

    def __post_init__(self) -> None:
        if self.kind == SamplerKind.ddim and self.plan is None:
            raise ConfigError("A DDIM sampler needs a plan.")

    @classmethod
    def ddpm(cls, sigma_choice: SigmaChoice = SigmaChoice.beta_tilde, clip_x0: bool = True) -> "SamplerConfig":
        return cls(kind=SamplerKind.ddpm, sigma_choice=sigma_choice, clip_x0=clip_x0)

    @classmethod
    def ddim(cls, timesteps: int, steps: int, eta: float = 0.0, clip_x0: bool = True) -> "SamplerConfig":
        return cls(kind=SamplerKind.ddim, plan=ddim_subsequence(timesteps, steps, eta), clip_x0=clip_x0)

    def transitions(self, schedule: NoiseSchedule) -> list[tuple[int, int]]:
        """Ordered ``(t_from, t_to)`` pairs the sampler walks, ending at ``t_to = 0``."""
        if self.kind == SamplerKind.ddpm:
            return [(t, t - 1) for t in range(schedule.timesteps, 0, -1)]
        steps = self.plan.subsequence
        if steps[-1] != schedule.timesteps:
            raise ConfigError(f"DDIM plan ends at {steps[-1]}, schedule has T={schedule.timesteps}.")
        previous = (0, *steps[:-1])
        return list(zip(reversed(steps), reversed(previous)))


def ddpm_sigma(schedule: NoiseSchedule, t: int, choice: SigmaChoice) -> float:
    variance = schedule.beta(t) if choice == SigmaChoice.beta else schedule.beta_tilde(t)
    return math.sqrt(variance)


def ddim_sigma(schedule: NoiseSchedule, t_from: int, t_to: int, eta: float) -> float:
    a_from = schedule.alpha_bar(t_from)
    a_to = schedule.alpha_bar(t_to)
    return eta * math.sqrt((1.0 - a_to) / (1.0 - a_from)) * math.sqrt(1.0 - a_from / a_to)


def ddpm_step(
    x_t: Tensor,
    t: int,
    eps_hat: Tensor,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    noise: Tensor | None = None,
) -> Tensor:
    """Ancestral step ``x_t -> x_{t-1}``; ``noise`` must be absent or zero at ``t = 1``."""
    t = schedule.check_t(t)
    if eps_hat.shape != x_t.shape:
        raise ShapeError(f"eps_hat {list(eps_hat.shape)} does not match x_t {list(x_t.shape)}.")
    if t == 1 and noise is not None and np.any(noise.data != 0):
        raise ConfigError("The last reverse step (t = 1) takes no noise.")

    beta = schedule.beta(t)
    alpha_bar = schedule.alpha_bar(t)
    if cfg.clip_x0:
        # posterior mean through the clipped x0 estimate
        x0 = ops.clip(predict_x0(x_t, t, eps_hat, schedule), -1.0, 1.0)
        alpha_bar_prev = schedule.alpha_bar(t - 1)
        coef_x0 = math.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar)
        coef_xt = math.sqrt(1.0 - beta) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
        mean = ops.add(ops.mul(x0, coef_x0), ops.mul(x_t, coef_xt))
    else:
        mean = ops.mul(ops.sub(x_t, ops.mul(eps_hat, beta / math.sqrt(1.0 - alpha_bar))), 1.0 / math.sqrt(1.0 - beta))
    if noise is None or t == 1:
        return mean
    return ops.add(mean, ops.mul(noise, ddpm_sigma(schedule, t, cfg.sigma_choice)))


def ddim_step(
    x_t: Tensor,
    t_from: int,
    t_to: int,
    eps_hat: Tensor,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    noise: Tensor | None = None,
    clip_x0: bool = False,
) -> Tensor:
    """Jump ``x_{t_from} -> x_{t_to}``; ``t_to = 0`` lands on the data domain (``abar_0 = 1``)."""
    t_from = schedule.check_t(t_from)
    if not 0 <= t_to < t_from:
        raise ConfigError(f"DDIM needs 0 <= t_to < t_from, got {t_from} -> {t_to}.")
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"DDIM eta must lie in [0, 1], got {eta}.")
    if eps_hat.shape != x_t.shape:
        raise ShapeError(f"eps_hat {list(eps_hat.shape)} does not match x_t {list(x_t.shape)}.")

    x0 = predict_x0(x_t, t_from, eps_hat, schedule)
    if clip_x0:
        x0 = ops.clip(x0, -1.0, 1.0)
    alpha_bar_to = schedule.alpha_bar(t_to)
    sigma = ddim_sigma(schedule, t_from, t_to, eta)
    direction = math.sqrt(max(1.0 - alpha_bar_to - sigma * sigma, 0.0))
    out = ops.add(ops.mul(x0, math.sqrt(alpha_bar_to)), ops.mul(eps_hat, direction))
    if noise is None or sigma == 0.0:
        return out
    return ops.add(out, ops.mul(noise, sigma))


def sample(
    denoiser: Denoiser,
    shape: Sequence[int],
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    rng: RngState,
    cond: Conditioning = NO_CONDITIONING,
    *,
    noises: NoiseProvider | None = None,
    on_step: StepHook | None = None,
    progress: ProgressCallback | None = None,
    dtype: np.dtype | type = np.float32,
) -> Tensor:
    """Reverse process from ``x_T ~ N(0, I)`` down to the data domain.

    Fresh noise is drawn from ``rng`` for every stochastic step unless
    ``noises`` supplies it, so two samplers fed the same provider follow
    coupled trajectories.
    """
    x = randn(rng, shape, dtype=dtype)
    if on_step is not None:
        x = on_step(x, schedule.timesteps)
    transitions = cfg.transitions(schedule)
    for done, (t_from, t_to) in enumerate(transitions, start=1):
        eps_hat = denoiser(x, t_from, cond)
        stochastic = t_to > 0 and (cfg.kind == SamplerKind.ddpm or cfg.plan.eta > 0.0)
        noise = None
        if stochastic:
            noise = noises(t_from) if noises is not None else randn(rng, x.shape, dtype=x.dtype)
        if cfg.kind == SamplerKind.ddpm:
            x = ddpm_step(x, t_from, eps_hat, schedule, cfg, noise)
        else:
            x = ddim_step(x, t_from, t_to, eps_hat, schedule, cfg.plan.eta, noise, cfg.clip_x0)
        if on_step is not None:
            x = on_step(x, t_to)
        if progress is not None:
            progress(done, len(transitions))
    return x
