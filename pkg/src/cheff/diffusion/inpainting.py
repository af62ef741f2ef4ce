from __future__ import annotations

import numpy as np

from cheff.diffusion.conditioning import Conditioning, Denoiser, NO_CONDITIONING
from cheff.diffusion.forward import q_sample
from cheff.diffusion.samplers import ProgressCallback, SamplerConfig, sample
from cheff.errors import ShapeError
from cheff.numeric.random import RngState, randn
from cheff.numeric.tensor import Tensor
from cheff.schedules import NoiseSchedule


def check_mask(mask: Tensor, like: Tensor) -> np.ndarray:
    """Validate a {0, 1} mask (1 = synthesize) against the tensor it applies to."""
    if mask.shape != like.shape:
        raise ShapeError(f"Mask {list(mask.shape)} does not match image {list(like.shape)}.")
    values = mask.data
    if not np.all((values == 0) | (values == 1)):
        raise ShapeError("Mask entries must be exactly 0 or 1.")
    return values.astype(bool)


def inpaint(
    denoiser: Denoiser,
    x_known: Tensor,
    mask: Tensor,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    rng: RngState,
    cond: Conditioning = NO_CONDITIONING,
    *,
    progress: ProgressCallback | None = None,
) -> Tensor:
    """Regenerate the masked region while the rest follows the re-noised known image.

    After every reverse step the unmasked region is replaced by
    ``q_sample(x_known, t)`` with fresh noise; the final composite copies
    ``x_known`` there verbatim. Re-noising draws come from a forked stream,
    so the sampler consumes ``rng`` exactly as an unconditional run would.
    """
    region = check_mask(mask, x_known)
    known = x_known.data
    composite_rng = rng.fork(1)

    def composite(x: Tensor, t: int) -> Tensor:
        if t == 0:
            target = known
        else:
            eps = randn(composite_rng, x_known.shape, dtype=x_known.dtype)
            target = q_sample(x_known, t, eps, schedule).data
        return Tensor.wrap(np.where(region, x.data, target).astype(x_known.dtype))

    return sample(
        denoiser,
        x_known.shape,
        schedule,
        cfg,
        rng,
        cond,
        on_step=composite,
        progress=progress,
        dtype=x_known.dtype,
    )


def outpaint(
    denoiser: Denoiser,
    x_known: Tensor,
    mask: Tensor,
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    rng: RngState,
    n_variants: int,
    cond: Conditioning = NO_CONDITIONING,
) -> list[Tensor]:
    """``n_variants`` independent inpaint runs on forked streams."""
    if n_variants < 1:
        raise ShapeError(f"n_variants must be >= 1, got {n_variants}.")
    if n_variants == 1:
        return [inpaint(denoiser, x_known, mask, schedule, cfg, rng, cond)]
    return [inpaint(denoiser, x_known, mask, schedule, cfg, rng.fork(index + 2), cond) for index in range(n_variants)]
