from __future__ import annotations

import tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cheff.diffusion.samplers import SamplerConfig, SamplerKind, SigmaChoice
from cheff.errors import ConfigError
from cheff.networks.autoencoder import AutoencoderConfig
from cheff.networks.text import TextEncoderConfig
from cheff.networks.unet import CrossAttentionConfig, UNetConfig, UNetSettings
from cheff.schedules import COSINE_OFFSET, DEFAULT_DIAGNOSTIC_THRESHOLD, NoiseSchedule, ScheduleKind, make_schedule


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometryConfig(Section):
    lr_size: int = Field(default=32, ge=1)
    hr_size: int = Field(default=128, ge=1)

    @model_validator(mode="after")
    def validate_geometry(self) -> "GeometryConfig":
        if self.hr_size % self.lr_size:
            raise ValueError(f"hr_size {self.hr_size} must be divisible by lr_size {self.lr_size}.")
        return self


class PathsConfig(Section):
    index: str = "data/index.json"
    ae: str = "checkpoints/ae.chkp"
    sdm: str = "checkpoints/sdm.chkp"
    sr: str = "checkpoints/sr.chkp"
    sr_finetuned: str = "checkpoints/sr_finetuned.chkp"
    text: str = "checkpoints/text.chkp"
    runs_dir: str = "runs"

    def resolved(self, root: Path) -> "PathsConfig":
        return PathsConfig(**{name: str((root / value).resolve()) for name, value in self.model_dump().items()})


class TrainingSettings(Section):
    steps: int = Field(default=300, ge=0)
    batch_size: int = Field(default=8, ge=1)
    lr: float = Field(default=1e-3, gt=0.0)
    log_every: int = Field(default=50, ge=1)


class ScheduleSettings(Section):
    kind: ScheduleKind = ScheduleKind.linear
    beta_start: float = 1e-4
    beta_end: float = 0.0295
    timesteps: int = Field(default=1000, ge=1)
    cosine_offset: float = Field(default=COSINE_OFFSET, gt=0.0)


class AutoencoderSection(AutoencoderConfig):
    training: TrainingSettings = Field(default_factory=TrainingSettings)

    def architecture(self) -> AutoencoderConfig:
        return AutoencoderConfig(**self.model_dump(exclude={"training"}))


def _sdm_unet() -> UNetSettings:
    return UNetSettings(attention_resolutions=[8, 4])


class SdmSection(Section):
    unet: UNetSettings = Field(default_factory=_sdm_unet)
    schedule: ScheduleSettings = Field(default_factory=ScheduleSettings)
    training: TrainingSettings = Field(default_factory=lambda: TrainingSettings(steps=500, lr=1e-3))
    conditioning: Literal["none", "report", "labels"] = "none"


def _sr_unet() -> UNetSettings:
    return UNetSettings(base_filters=16, multipliers=[1, 2, 4], attention_resolutions=[32], time_embed_dim=64)


def _sr_schedule() -> ScheduleSettings:
    return ScheduleSettings(kind=ScheduleKind.cosine, timesteps=2000)


class SrSection(Section):
    unet: UNetSettings = Field(default_factory=_sr_unet)
    schedule: ScheduleSettings = Field(default_factory=_sr_schedule)
    training: TrainingSettings = Field(default_factory=lambda: TrainingSettings(steps=500, batch_size=4, lr=1e-3))
    finetune: TrainingSettings = Field(default_factory=lambda: TrainingSettings(steps=200, batch_size=4, lr=4e-4))


class TextSection(Section):
    embed_dim: int = Field(default=64, ge=1)
    depth: int = Field(default=2, ge=0)
    heads: int = Field(default=4, ge=1)
    max_len: int = Field(default=150, ge=2)
    mlp_ratio: int = Field(default=4, ge=1)
    allow_empty: bool = False
    min_freq: int = Field(default=1, ge=1)
    train_jointly: bool = True

    def encoder_config(self, vocab_size: int) -> TextEncoderConfig:
        return TextEncoderConfig(vocab_size=vocab_size, **self.model_dump(exclude={"min_freq", "train_jointly"}))


class SamplerSettings(Section):
    kind: SamplerKind = SamplerKind.ddim
    steps: int = Field(default=150, ge=1)
    eta: float = Field(default=0.0, ge=0.0, le=1.0)
    sigma_choice: SigmaChoice = SigmaChoice.beta_tilde
    clip_x0: bool = True

    def build(self, schedule: NoiseSchedule) -> SamplerConfig:
        if self.kind == SamplerKind.ddpm:
            return SamplerConfig.ddpm(self.sigma_choice, self.clip_x0)
        steps = min(self.steps, schedule.timesteps)
        return SamplerConfig.ddim(schedule.timesteps, steps, self.eta, self.clip_x0)


class DiagnosticSettings(Section):
    threshold: float = Field(default=DEFAULT_DIAGNOSTIC_THRESHOLD, gt=0.0)


class PipelineConfig(Section):
    seed: int = Field(default=0, ge=0, lt=2**64)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    autoencoder: AutoencoderSection = Field(default_factory=AutoencoderSection)
    sdm: SdmSection = Field(default_factory=SdmSection)
    sr: SrSection = Field(default_factory=SrSection)
    text: TextSection = Field(default_factory=TextSection)
    sampler: SamplerSettings = Field(default_factory=SamplerSettings)
    diagnostic: DiagnosticSettings = Field(default_factory=DiagnosticSettings)

    @model_validator(mode="after")
    def validate_pipeline(self) -> "PipelineConfig":
        factor = self.autoencoder.downsample_factor
        if self.geometry.lr_size % factor:
            raise ValueError(f"lr_size {self.geometry.lr_size} must be divisible by the autoencoder factor {factor}.")
        latent = self.latent_size
        sdm_factor = 2 ** (len(self.sdm.unet.multipliers) - 1)
        if latent % sdm_factor:
            raise ValueError(f"Latent size {latent} is not divisible by the SDM U-net factor {sdm_factor}.")
        sr_factor = 2 ** (len(self.sr.unet.multipliers) - 1)
        if self.geometry.hr_size % sr_factor:
            raise ValueError(f"hr_size {self.geometry.hr_size} is not divisible by the SR U-net factor {sr_factor}.")
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        """Load and validate a TOML config; relative paths resolve against the config directory's parent."""
        config_path = Path(path).resolve()
        try:
            with config_path.open("rb") as handle:
                data = tomllib.load(handle)
        except OSError as exc:
            raise ConfigError(f"Cannot read config {config_path}: {exc.strerror}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"Invalid TOML in {config_path}: {exc}") from exc
        config = cls.validated(data, source=str(config_path))
        config.paths = config.paths.resolved(config_path.parent.parent)
        return config

    @classmethod
    def validated(cls, data: dict[str, Any], source: str = "config") -> "PipelineConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            first = exc.errors()[0]
            location = ".".join(str(part) for part in first["loc"]) or "<root>"
            raise ConfigError(f"{source}: {location}: {first['msg']}") from exc

    def with_overrides(self, *, seed: int | None = None, runs_dir: str | Path | None = None) -> "PipelineConfig":
        update: dict[str, Any] = {}
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError(f"Seed must be an unsigned 64-bit value, got {seed}.")
            update["seed"] = seed
        if runs_dir is not None:
            update["paths"] = self.paths.model_copy(update={"runs_dir": str(Path(runs_dir).resolve())})
        return self.model_copy(update=update)

    @property
    def latent_size(self) -> int:
        return self.autoencoder.latent_size(self.geometry.lr_size)

    def sdm_schedule(self) -> NoiseSchedule:
        return make_schedule(self.sdm.schedule)

    def sr_schedule(self) -> NoiseSchedule:
        return make_schedule(self.sr.schedule)

    def sdm_unet(self, conditioned: bool) -> UNetConfig:
        channels = self.autoencoder.latent_channels
        cross_attn = CrossAttentionConfig(d_tau=self.text.embed_dim, heads=self.sdm.unet.heads) if conditioned else None
        return UNetConfig(
            **self.sdm.unet.model_dump(),
            image_size=self.latent_size,
            in_channels=channels,
            out_channels=channels,
            cross_attn=cross_attn,
        )

    def sr_unet(self) -> UNetConfig:
        channels = self.autoencoder.image_channels
        return UNetConfig(
            **self.sr.unet.model_dump(),
            image_size=self.geometry.hr_size,
            in_channels=channels,
            out_channels=channels,
            cond_channels=channels,
        )

    def echo(self) -> dict[str, Any]:
        """Resolved config for manifests; the output location is not part of a run's identity."""
        return self.model_dump(mode="json", exclude={"paths": {"runs_dir"}})
