from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from cheff.diffusion.conditioning import Conditioning, ConditioningKind
from cheff.errors import ShapeError
from cheff.networks import layers
from cheff.numeric import ops
from cheff.numeric.optim import ParamSet
from cheff.numeric.random import RngState
from cheff.numeric.tensor import Tensor


class CrossAttentionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d_tau: int = Field(default=64, ge=1)
    heads: int = Field(default=1, ge=1)


class UNetSettings(BaseModel):
    """Architecture knobs that live in the config file."""

    model_config = ConfigDict(extra="forbid")

    base_filters: int = Field(default=32, ge=2)
    multipliers: list[int] = Field(default_factory=lambda: [1, 2, 4], min_length=1)
    res_layers_per_block: int = Field(default=1, ge=1)
    attention_resolutions: list[int] = Field(default_factory=lambda: [8, 16])
    time_embed_dim: int = Field(default=128, ge=1)
    heads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def validate_settings(self) -> "UNetSettings":
        if self.base_filters % 2:
            raise ValueError("base_filters must be even (it sizes the sinusoidal embedding).")
        if any(mult < 1 for mult in self.multipliers):
            raise ValueError("multipliers must be positive.")
        if any(size < 1 or size & (size - 1) for size in self.attention_resolutions):
            raise ValueError("attention_resolutions must be powers of two.")
        return self


class UNetConfig(UNetSettings):
    """Full U-net description: architecture plus channel wiring and conditioning."""

    image_size: int = Field(default=32, ge=1)
    in_channels: int = Field(default=1, ge=1)
    out_channels: int = Field(default=1, ge=1)
    cond_channels: int = Field(default=0, ge=0)
    cross_attn: CrossAttentionConfig | None = None

    @model_validator(mode="after")
    def validate_geometry(self) -> "UNetConfig":
        if self.image_size % self.downsample_factor:
            raise ValueError(f"image_size {self.image_size} is not divisible by {self.downsample_factor}.")
        return self

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.multipliers) - 1)

    def has_attention(self, level: int) -> bool:
        return self.image_size // (2**level) in self.attention_resolutions


@dataclass(frozen=True)
class Block:
    kind: str
    name: str
    in_channels: int
    out_channels: int
    pop_skip: int = 0
    push_skip: bool = False


def layout(cfg: UNetConfig) -> list[Block]:
    """Ordered block plan shared by parameter creation and the forward pass."""
    base = cfg.base_filters
    last = len(cfg.multipliers) - 1
    blocks = [Block("conv_in", "conv_in", cfg.in_channels + cfg.cond_channels, base, push_skip=True)]
    skips = [base]
    channels = base
    for level, mult in enumerate(cfg.multipliers):
        width = base * mult
        for index in range(cfg.res_layers_per_block):
            blocks.append(Block("res", f"down.{level}.res.{index}", channels, width))
            channels = width
            if cfg.has_attention(level):
                blocks.append(Block("attn", f"down.{level}.attn.{index}", channels, channels))
            blocks[-1] = _with_push(blocks[-1])
            skips.append(channels)
        if level != last:
            blocks.append(Block("down", f"down.{level}.downsample", channels, channels, push_skip=True))
            skips.append(channels)

    blocks.append(Block("res", "mid.res.0", channels, channels))
    blocks.append(Block("attn", "mid.attn", channels, channels))
    blocks.append(Block("res", "mid.res.1", channels, channels))

    for level in reversed(range(len(cfg.multipliers))):
        width = base * cfg.multipliers[level]
        for index in range(cfg.res_layers_per_block + 1):
            skip = skips.pop()
            blocks.append(Block("res", f"up.{level}.res.{index}", channels + skip, width, pop_skip=skip))
            channels = width
            if cfg.has_attention(level):
                blocks.append(Block("attn", f"up.{level}.attn.{index}", channels, channels))
        if level != 0:
            blocks.append(Block("up", f"up.{level}.upsample", channels, channels))
    blocks.append(Block("out", "out", channels, cfg.out_channels))
    return blocks


def _with_push(block: Block) -> Block:
    return Block(block.kind, block.name, block.in_channels, block.out_channels, block.pop_skip, True)


def init_unet(cfg: UNetConfig, rng: RngState, dtype: Any = np.float32) -> ParamSet:
    init = layers.Initializer(rng, dtype)
    init.linear("time.0", cfg.base_filters, cfg.time_embed_dim)
    init.linear("time.1", cfg.time_embed_dim, cfg.time_embed_dim)
    context_dim = cfg.cross_attn.d_tau if cfg.cross_attn else None
    for block in layout(cfg):
        if block.kind == "conv_in":
            init.conv(block.name, block.in_channels, block.out_channels)
        elif block.kind == "res":
            init.resblock(block.name, block.in_channels, block.out_channels, cfg.time_embed_dim)
        elif block.kind == "attn":
            init.spatial_attention(block.name, block.in_channels, context_dim)
        elif block.kind in ("down", "up"):
            init.conv(block.name, block.in_channels, block.out_channels)
        elif block.kind == "out":
            init.norm("out.norm", block.in_channels)
            # zero so an untrained model predicts eps_hat = 0
            init.conv("out.conv", block.in_channels, block.out_channels, zero=True)
    return init.params


def unet_forward(cfg: UNetConfig, params: ParamSet, x_t: Tensor, t: int | np.ndarray, cond: Conditioning) -> Tensor:
    n, channels, h, w = x_t.shape
    factor = cfg.downsample_factor
    if h % factor or w % factor:
        raise ShapeError(f"U-net input {h}x{w} is not divisible by {factor}.")
    if channels != cfg.in_channels:
        raise ShapeError(f"U-net expects {cfg.in_channels} input channels, got {channels}.")

    x = x_t
    if cond.kind == ConditioningKind.concat_image:
        image = cond.tensor
        if image.shape[0] != n or image.shape[1] != cfg.cond_channels or image.shape[2:] != (h, w):
            raise ShapeError(
                f"Concat conditioning {list(image.shape)} does not fit input {list(x_t.shape)} "
                f"with {cfg.cond_channels} conditioning channels."
            )
        x = ops.concat([x_t, image.astype(x_t.dtype)], axis=1)
    elif cfg.cond_channels:
        raise ShapeError("This U-net needs concat_image conditioning.")

    context = None
    if cond.kind == ConditioningKind.embedding:
        if cfg.cross_attn is None:
            raise ShapeError("Embedding conditioning given to a U-net without cross-attention.")
        context = cond.tensor.astype(x_t.dtype) if cond.tensor.dtype != x_t.dtype else cond.tensor

    steps = np.broadcast_to(np.asarray(t), (n,))
    time = layers.sinusoidal_embedding(steps, cfg.base_filters, dtype=x_t.dtype)
    time = layers.linear(params, "time.1", ops.silu(layers.linear(params, "time.0", time)))

    skips: list[Tensor] = []
    cross_heads = cfg.cross_attn.heads if cfg.cross_attn is not None else None
    for block in layout(cfg):
        if block.kind == "conv_in":
            x = layers.conv(params, block.name, x)
        elif block.kind == "res":
            if block.pop_skip:
                x = ops.concat([x, skips.pop()], axis=1)
            x = layers.resblock(params, block.name, x, time)
        elif block.kind == "attn":
            x = layers.spatial_attention(params, block.name, x, cfg.heads, context, cross_heads)
        elif block.kind == "down":
            x = layers.conv(params, block.name, x, stride=2)
        elif block.kind == "up":
            x = layers.conv(params, block.name, ops.upsample_nearest(x, 2))
        elif block.kind == "out":
            x = layers.conv(params, "out.conv", ops.silu(layers.norm(params, "out.norm", x)))
        if block.push_skip:
            skips.append(x)
    return x


class UNetDenoiser:
    """Callable noise predictor over a fixed config and parameter set."""

    def __init__(self, cfg: UNetConfig, params: ParamSet):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: UNetConfig, rng: RngState, dtype: Any = np.float32) -> "UNetDenoiser":
        return cls(cfg, init_unet(cfg, rng, dtype))

    def __call__(self, x_t: Tensor, t: int | np.ndarray, cond: Conditioning) -> Tensor:
        return unet_forward(self.cfg, self.params, x_t, t, cond)
