from __future__ import annotations

import math

import numpy as np

from cheff.diffusion.conditioning import Conditioning, Denoiser, NO_CONDITIONING
from cheff.errors import ShapeError
from cheff.numeric import ops
from cheff.numeric.random import RngState, randint, randn
from cheff.numeric.tensor import Tensor
from cheff.schedules import NoiseSchedule


def q_sample(x0: Tensor, t: int, eps: Tensor, schedule: NoiseSchedule) -> Tensor:
    """Closed-form forward marginal ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    if eps.shape != x0.shape:
        raise ShapeError(f"Noise {list(eps.shape)} does not match x0 {list(x0.shape)}.")
    alpha_bar = schedule.alpha_bar(schedule.check_t(t))
    return ops.add(ops.mul(x0, math.sqrt(alpha_bar)), ops.mul(eps, math.sqrt(1.0 - alpha_bar)))


def q_sample_batch(x0: Tensor, t: np.ndarray, eps: Tensor, schedule: NoiseSchedule) -> Tensor:
    """``q_sample`` with one timestep per batch row."""
    if eps.shape != x0.shape:
        raise ShapeError(f"Noise {list(eps.shape)} does not match x0 {list(x0.shape)}.")
    steps = np.asarray(t, dtype=np.int64)
    if steps.shape != (x0.shape[0],):
        raise ShapeError(f"Need one timestep per sample: {steps.shape} vs batch {x0.shape[0]}.")
    for step in np.unique(steps):
        schedule.check_t(int(step))
    alpha_bar = schedule.alpha_bars[steps - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    signal = Tensor.wrap(np.sqrt(alpha_bar).astype(x0.dtype))
    noise = Tensor.wrap(np.sqrt(1.0 - alpha_bar).astype(x0.dtype))
    return ops.add(ops.mul(x0, signal), ops.mul(eps, noise))


def predict_x0(x_t: Tensor, t: int, eps_hat: Tensor, schedule: NoiseSchedule) -> Tensor:
    """Invert ``q_sample`` for ``x0`` given a noise estimate."""
    alpha_bar = schedule.alpha_bar(schedule.check_t(t))
    return ops.div(ops.sub(x_t, ops.mul(eps_hat, math.sqrt(1.0 - alpha_bar))), math.sqrt(alpha_bar))


def training_loss(
    x0: Tensor,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    rng: RngState,
    cond: Conditioning = NO_CONDITIONING,
) -> Tensor:
    """Simplified objective ``E ||eps - eps_theta(x_t, t, c)||^2``.

    Draws ``t ~ U{1..T}`` and ``eps ~ N(0, I)`` per sample. Latent targets
    with embedding conditioning give the semantic-generation loss; high-res
    targets with concatenated low-res images give the super-resolution loss.
    """
    if x0.ndim < 1 or x0.shape[0] < 1:
        raise ShapeError("training_loss needs a non-empty batch.")
    steps = randint(rng, 1, schedule.timesteps, size=x0.shape[0])
    eps = randn(rng, x0.shape, dtype=x0.dtype)
    x_t = q_sample_batch(x0, steps, eps, schedule)
    eps_hat = denoiser(x_t, steps, cond)
    if eps_hat.shape != x0.shape:
        raise ShapeError(f"Denoiser output {list(eps_hat.shape)} does not match input {list(x0.shape)}.")
    return ops.mse(eps_hat, eps)
