from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from cheff.config import ScheduleSettings
from cheff.datapipe.tokenizer import Vocabulary
from cheff.errors import CheckpointError, DataError
from cheff.networks.autoencoder import Autoencoder, AutoencoderConfig
from cheff.networks.checkpoint import Checkpoint, ModelKind, read_checkpoint
from cheff.networks.text import TextEncoder, TextEncoderConfig
from cheff.networks.unet import UNetConfig, UNetDenoiser
from cheff.schedules import NoiseSchedule, make_schedule


@dataclass
class DiffusionModel:
    """A trained denoiser together with the schedule it was trained on."""

    denoiser: UNetDenoiser
    schedule_settings: ScheduleSettings
    conditioning: str = "none"

    @property
    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.schedule_settings)


@dataclass
class TextModel:
    encoder: TextEncoder
    vocab: Vocabulary
    source: str


def autoencoder_checkpoint(model: Autoencoder) -> Checkpoint:
    return Checkpoint(kind=ModelKind.AE, config=model.cfg.model_dump(mode="json"), params=model.params)


def diffusion_checkpoint(kind: ModelKind, model: DiffusionModel) -> Checkpoint:
    config = {
        "unet": model.denoiser.cfg.model_dump(mode="json"),
        "schedule": model.schedule_settings.model_dump(mode="json"),
        "conditioning": model.conditioning,
    }
    return Checkpoint(kind=kind, config=config, params=model.denoiser.params)


def text_checkpoint(model: TextModel) -> Checkpoint:
    config = {
        "encoder": model.encoder.cfg.model_dump(mode="json"),
        "vocab": model.vocab.to_config(),
        "source": model.source,
    }
    return Checkpoint(kind=ModelKind.TXT, config=config, params=model.encoder.params)


def _parse(checkpoint: Checkpoint, build: Any) -> Any:
    try:
        return build(checkpoint.config)
    except (KeyError, TypeError, ValidationError) as exc:
        raise CheckpointError(f"Checkpoint {checkpoint.path} has an unusable config echo: {exc}") from exc


def _require(path: str | Path, stage: str) -> Path:
    target = Path(path)
    if not target.is_file():
        raise DataError(f"{stage} checkpoint not found: {target}")
    return target


def load_autoencoder(path: str | Path) -> Autoencoder:
    checkpoint = read_checkpoint(_require(path, "autoencoder"), ModelKind.AE)
    cfg = _parse(checkpoint, AutoencoderConfig.model_validate)
    return Autoencoder(cfg, checkpoint.params)


def load_diffusion(path: str | Path, kind: ModelKind) -> DiffusionModel:
    stage = "SDM" if kind == ModelKind.SDM else "SR"
    checkpoint = read_checkpoint(_require(path, stage), kind)

    def build(config: dict[str, Any]) -> DiffusionModel:
        return DiffusionModel(
            denoiser=UNetDenoiser(UNetConfig.model_validate(config["unet"]), checkpoint.params),
            schedule_settings=ScheduleSettings.model_validate(config["schedule"]),
            conditioning=str(config.get("conditioning", "none")),
        )

    return _parse(checkpoint, build)


def load_text(path: str | Path) -> TextModel:
    checkpoint = read_checkpoint(_require(path, "text encoder"), ModelKind.TXT)

    def build(config: dict[str, Any]) -> TextModel:
        return TextModel(
            encoder=TextEncoder(TextEncoderConfig.model_validate(config["encoder"]), checkpoint.params),
            vocab=Vocabulary.model_validate(config["vocab"]),
            source=str(config["source"]),
        )

    return _parse(checkpoint, build)
