from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from cheff.errors import ShapeError
from cheff.networks import layers
from cheff.numeric import ops
from cheff.numeric.optim import ParamSet
from cheff.numeric.random import RngState, randn
from cheff.numeric.tensor import Tensor


LOGVAR_RANGE = (-30.0, 20.0)


class AutoencoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image_channels: int = Field(default=1, ge=1)
    latent_channels: int = Field(default=3, ge=1)
    channel_schedule: list[int] = Field(default_factory=lambda: [32, 64, 128], min_length=1)
    res_layers: int = Field(default=1, ge=1)
    kl_weight: float = Field(default=1e-6, ge=0.0)

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.channel_schedule) - 1)

    def latent_size(self, image_size: int) -> int:
        if image_size % self.downsample_factor:
            raise ShapeError(f"Image size {image_size} is not divisible by {self.downsample_factor}.")
        return image_size // self.downsample_factor


@dataclass(frozen=True)
class Posterior:
    """Diagonal Gaussian over latents; ``logvar`` is clipped on construction."""

    mu: Tensor
    logvar: Tensor

    def __post_init__(self) -> None:
        if self.mu.shape != self.logvar.shape:
            raise ShapeError(f"Posterior mu {list(self.mu.shape)} and logvar {list(self.logvar.shape)} differ.")
        object.__setattr__(self, "logvar", ops.clip(self.logvar, *LOGVAR_RANGE))

    @property
    def std(self) -> Tensor:
        return ops.exp(ops.mul(self.logvar, 0.5))

    def sample(self, rng: RngState | None = None, noise: Tensor | None = None) -> Tensor:
        """``z = mu + exp(logvar / 2) * eps``; pass ``noise`` to fix ``eps``."""
        if noise is None:
            if rng is None:
                raise ValueError("Posterior.sample needs an rng or explicit noise.")
            noise = randn(rng, self.mu.shape, dtype=self.mu.dtype)
        if noise.shape != self.mu.shape:
            raise ShapeError(f"Noise {list(noise.shape)} does not match latent {list(self.mu.shape)}.")
        return ops.add(self.mu, ops.mul(self.std, noise))

    def kl(self) -> Tensor:
        """Per-element ``KL(N(mu, e^logvar) || N(0, 1))``."""
        return ops.mul(
            ops.sub(ops.add(ops.square(self.mu), ops.exp(self.logvar)), ops.add(self.logvar, 1.0)),
            0.5,
        )


def init_autoencoder(cfg: AutoencoderConfig, rng: RngState, dtype: Any = np.float32) -> ParamSet:
    init = layers.Initializer(rng, dtype)
    schedule = cfg.channel_schedule
    last = len(schedule) - 1

    init.conv("encoder.conv_in", cfg.image_channels, schedule[0])
    channels = schedule[0]
    for level, width in enumerate(schedule):
        for index in range(cfg.res_layers):
            init.resblock(f"encoder.down.{level}.res.{index}", channels, width, None)
            channels = width
        if level != last:
            init.conv(f"encoder.down.{level}.downsample", channels, channels)
    init.resblock("encoder.mid", channels, channels, None)
    init.norm("encoder.out.norm", channels)
    init.conv("encoder.out.conv", channels, 2 * cfg.latent_channels)

    init.conv("decoder.conv_in", cfg.latent_channels, schedule[-1])
    channels = schedule[-1]
    init.resblock("decoder.mid", channels, channels, None)
    for level in reversed(range(len(schedule))):
        width = schedule[level]
        for index in range(cfg.res_layers):
            init.resblock(f"decoder.up.{level}.res.{index}", channels, width, None)
            channels = width
        if level != 0:
            init.conv(f"decoder.up.{level}.upsample", channels, channels)
    init.norm("decoder.out.norm", channels)
    init.conv("decoder.out.conv", channels, cfg.image_channels)
    return init.params


def encode(cfg: AutoencoderConfig, params: ParamSet, x: Tensor) -> Posterior:
    if x.ndim != 4 or x.shape[1] != cfg.image_channels:
        raise ShapeError(f"Encoder expects [N, {cfg.image_channels}, H, W], got {list(x.shape)}.")
    cfg.latent_size(x.shape[2])
    cfg.latent_size(x.shape[3])

    last = len(cfg.channel_schedule) - 1
    h = layers.conv(params, "encoder.conv_in", x)
    for level in range(len(cfg.channel_schedule)):
        for index in range(cfg.res_layers):
            h = layers.resblock(params, f"encoder.down.{level}.res.{index}", h)
        if level != last:
            h = layers.conv(params, f"encoder.down.{level}.downsample", h, stride=2)
    h = layers.resblock(params, "encoder.mid", h)
    h = layers.conv(params, "encoder.out.conv", ops.silu(layers.norm(params, "encoder.out.norm", h)))
    k = cfg.latent_channels
    return Posterior(mu=ops.slice_axis(h, 1, 0, k), logvar=ops.slice_axis(h, 1, k, 2 * k))


def decode(cfg: AutoencoderConfig, params: ParamSet, z: Tensor) -> Tensor:
    if z.ndim != 4 or z.shape[1] != cfg.latent_channels:
        raise ShapeError(f"Decoder expects [N, {cfg.latent_channels}, h, w], got {list(z.shape)}.")
    h = layers.conv(params, "decoder.conv_in", z)
    h = layers.resblock(params, "decoder.mid", h)
    for level in reversed(range(len(cfg.channel_schedule))):
        for index in range(cfg.res_layers):
            h = layers.resblock(params, f"decoder.up.{level}.res.{index}", h)
        if level != 0:
            h = layers.conv(params, f"decoder.up.{level}.upsample", ops.upsample_nearest(h, 2))
    return layers.conv(params, "decoder.out.conv", ops.silu(layers.norm(params, "decoder.out.norm", h)))


class Autoencoder:
    """KL-regularized convolutional autoencoder ``E`` / ``D``."""

    def __init__(self, cfg: AutoencoderConfig, params: ParamSet):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: AutoencoderConfig, rng: RngState, dtype: Any = np.float32) -> "Autoencoder":
        return cls(cfg, init_autoencoder(cfg, rng, dtype))

    @property
    def kl_weight(self) -> float:
        return self.cfg.kl_weight

    def encode(self, x: Tensor) -> Posterior:
        return encode(self.cfg, self.params, x)

    def decode(self, z: Tensor) -> Tensor:
        return decode(self.cfg, self.params, z)

    def reconstruct(self, x: Tensor) -> Tensor:
        """``D(E(x))`` through the posterior mean."""
        return self.decode(self.encode(x).mu)


def ae_loss(model: Autoencoder, x: Tensor, rng: RngState | None = None, noise: Tensor | None = None) -> Tensor:
    """Pixel MSE of ``D(z)`` against ``x`` plus ``kl_weight`` times the mean KL."""
    posterior = model.encode(x)
    z = posterior.sample(rng, noise)
    reconstruction = model.decode(z)
    if reconstruction.shape != x.shape:
        raise ShapeError(f"Reconstruction {list(reconstruction.shape)} does not match input {list(x.shape)}.")
    return ops.add(ops.mse(reconstruction, x), ops.mul(ops.mean(posterior.kl()), model.kl_weight))
