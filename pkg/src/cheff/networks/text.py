from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from cheff.errors import ShapeError
from cheff.networks import layers
from cheff.numeric import ops
from cheff.numeric.optim import ParamSet
from cheff.numeric.random import RngState
from cheff.numeric.tensor import Tensor


PAD_ID = 0


class TextEncoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(default=4, ge=4)
    embed_dim: int = Field(default=64, ge=1)
    depth: int = Field(default=2, ge=0)
    heads: int = Field(default=4, ge=1)
    max_len: int = Field(default=150, ge=2)
    mlp_ratio: int = Field(default=4, ge=1)
    allow_empty: bool = False

    @model_validator(mode="after")
    def validate_heads(self) -> "TextEncoderConfig":
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by {self.heads} heads.")
        return self


def init_text_encoder(cfg: TextEncoderConfig, rng: RngState, dtype: Any = np.float32) -> ParamSet:
    init = layers.Initializer(rng, dtype)
    d = cfg.embed_dim
    init.uniform("tokens", (cfg.vocab_size, d), d)
    init.uniform("positions", (cfg.max_len, d), d)
    for index in range(cfg.depth):
        prefix = f"blocks.{index}"
        init.norm(f"{prefix}.ln1", d)
        init.attention(f"{prefix}.attn", d)
        init.norm(f"{prefix}.ln2", d)
        init.linear(f"{prefix}.fc1", d, d * cfg.mlp_ratio)
        init.linear(f"{prefix}.fc2", d * cfg.mlp_ratio, d)
    init.norm("final", d)
    return init.params


def _layer_norm(params: ParamSet, prefix: str, x: Tensor) -> Tensor:
    return ops.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def pad_batch(token_lists: Sequence[Sequence[int]], cfg: TextEncoderConfig) -> np.ndarray:
    """Stack token lists into ``[B, L_max]`` ids, right-padded with PAD."""
    if not token_lists:
        raise ShapeError("Text batch is empty.")
    rows: list[list[int]] = []
    for tokens in token_lists:
        tokens = [int(token) for token in tokens]
        if not tokens:
            if not cfg.allow_empty:
                raise ShapeError("Empty token list; enable allow_empty to encode it as a single PAD.")
            tokens = [PAD_ID]
        if len(tokens) > cfg.max_len:
            raise ShapeError(f"Token list of length {len(tokens)} exceeds max_len {cfg.max_len}.")
        rows.append(tokens)
    width = max(len(row) for row in rows)
    return np.array([row + [PAD_ID] * (width - len(row)) for row in rows], dtype=np.int64)


def encode_batch(cfg: TextEncoderConfig, params: ParamSet, token_lists: Sequence[Sequence[int]]) -> Tensor:
    """``tau(y)`` for a batch: ``[B, L_max, embed_dim]``."""
    ids = pad_batch(token_lists, cfg)
    batch, length = ids.shape
    d = cfg.embed_dim
    h = ops.reshape(ops.gather_rows(params["tokens"], ids.reshape(-1)), (batch, length, d))
    h = ops.add(h, ops.slice_axis(params["positions"], 0, 0, length))
    for index in range(cfg.depth):
        prefix = f"blocks.{index}"
        normed = _layer_norm(params, f"{prefix}.ln1", h)
        h = ops.add(h, layers.attention(params, f"{prefix}.attn", normed, normed, cfg.heads))
        normed = _layer_norm(params, f"{prefix}.ln2", h)
        hidden = ops.silu(layers.linear(params, f"{prefix}.fc1", normed))
        h = ops.add(h, layers.linear(params, f"{prefix}.fc2", hidden))
    return _layer_norm(params, "final", h)


def text_encode(cfg: TextEncoderConfig, params: ParamSet, tokens: Sequence[int]) -> Tensor:
    """``tau(y)`` for one token list: ``[L, embed_dim]``."""
    out = encode_batch(cfg, params, [tokens])
    return ops.reshape(out, out.shape[1:])


class TextEncoder:
    def __init__(self, cfg: TextEncoderConfig, params: ParamSet):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: TextEncoderConfig, rng: RngState, dtype: Any = np.float32) -> "TextEncoder":
        return cls(cfg, init_text_encoder(cfg, rng, dtype))

    def encode(self, tokens: Sequence[int]) -> Tensor:
        return text_encode(self.cfg, self.params, tokens)

    def encode_batch(self, token_lists: Sequence[Sequence[int]]) -> Tensor:
        return encode_batch(self.cfg, self.params, token_lists)
