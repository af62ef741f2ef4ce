from __future__ import annotations

import logging
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cheff.artifacts import atomic_write_json
from cheff.config import PipelineConfig, ScheduleSettings, TrainingSettings
from cheff.datapipe.tokenizer import Vocabulary, build_vocabulary, tokenize
from cheff.diffusion.conditioning import NO_CONDITIONING, Conditioning
from cheff.diffusion.forward import training_loss
from cheff.errors import ConfigError, NumericError, ShapeError
from cheff.networks.autoencoder import Autoencoder, ae_loss
from cheff.networks.checkpoint import Checkpoint, ModelKind
from cheff.networks.text import TextEncoder
from cheff.networks.unet import UNetDenoiser
from cheff.numeric.optim import ParamSet, adam_step
from cheff.numeric.random import RngState, randn
from cheff.numeric.tensor import Graph, Tensor, backward
from cheff.pipeline.data import ImageSet, batches, resize_batch
from cheff.pipeline.models import (
    DiffusionModel,
    TextModel,
    autoencoder_checkpoint,
    diffusion_checkpoint,
    text_checkpoint,
)
from cheff.pipeline.progress import SILENT, TerminalProgress
from cheff.schedules import make_schedule


logger = logging.getLogger(__name__)

# stream index per stage under the config seed
STAGE_STREAMS = {"ae": 0, "sdm": 1, "sr": 2, "finetune-sr": 3}

LossFn = Callable[[np.ndarray, RngState], Tensor]


@dataclass
class TrainingResult:
    stage: str
    checkpoint: Checkpoint
    losses: list[float]
    text: Checkpoint | None = None
    model: object | None = field(default=None, repr=False)

    def write_loss_curve(self, directory: str | Path) -> Path:
        return atomic_write_json(Path(directory) / f"{self.stage}_loss.json", self.losses)


def stage_rng(config: PipelineConfig, stage: str) -> RngState:
    return RngState(seed=config.seed).fork(STAGE_STREAMS[stage])


def fit(
    param_sets: Mapping[str, ParamSet],
    loss_fn: LossFn,
    count: int,
    settings: TrainingSettings,
    rng: RngState,
    *,
    label: str,
    progress: TerminalProgress = SILENT,
) -> list[float]:
    """Adam on ``loss_fn`` over shuffled batches of ``count`` samples.

    Raises :class:`NumericError` as soon as a loss or gradient is not finite.
    """
    batch_iter = batches(rng.fork(0), count, settings.batch_size)
    loss_rng = rng.fork(1)
    losses: list[float] = []
    for step in range(1, settings.steps + 1):
        index = next(batch_iter)
        with Graph() as graph:
            loss = loss_fn(index, loss_rng)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"{label}: loss became {value} at step {step}.")
        merged = {f"{group}/{name}": tensor for group, params in param_sets.items() for name, tensor in params.items()}
        grads = backward(graph, loss, merged)
        for key, grad in grads.items():
            if not np.isfinite(grad.data).all():
                raise NumericError(f"{label}: non-finite gradient for {key} at step {step}.")
        for group, params in param_sets.items():
            adam_step(params, {name: grads[f"{group}/{name}"] for name in params}, settings.lr)
        losses.append(value)
        progress.update(f"{label} step {step}/{settings.steps} loss {value:.4f}")
        if step % settings.log_every == 0:
            logger.info("%s step %d/%d loss %.6f", label, step, settings.steps, value)
    if settings.steps:
        progress.complete(f"{label} step {settings.steps}/{settings.steps} loss {losses[-1]:.4f}")
    return losses


def train_ae(config: PipelineConfig, data: ImageSet, *, progress: TerminalProgress = SILENT) -> TrainingResult:
    """Pixel + KL autoencoder training on ``x_LR`` images."""
    rng = stage_rng(config, "ae")
    images = resize_batch(data.images, config.geometry.lr_size)
    model = Autoencoder.create(config.autoencoder.architecture(), rng.fork(2))

    def loss_fn(index: np.ndarray, loss_rng: RngState) -> Tensor:
        return ae_loss(model, Tensor.wrap(images[index]), loss_rng)

    losses = fit({"ae": model.params}, loss_fn, len(images), config.autoencoder.training, rng, label="train-ae", progress=progress)
    return TrainingResult("ae", autoencoder_checkpoint(model), losses, model=model)


def encode_posteriors(ae: Autoencoder, images: np.ndarray, chunk: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Posterior ``(mu, std)`` arrays for a batch of model-range images."""
    mus, stds = [], []
    for start in range(0, len(images), chunk):
        posterior = ae.encode(Tensor.wrap(images[start : start + chunk]))
        mus.append(posterior.mu.data)
        stds.append(posterior.std.data)
    return np.concatenate(mus), np.concatenate(stds)


def decode_latents(ae: Autoencoder, latents: np.ndarray, chunk: int = 32) -> np.ndarray:
    return np.concatenate([ae.decode(Tensor.wrap(latents[start : start + chunk])).data for start in range(0, len(latents), chunk)])


def _text_model(config: PipelineConfig, texts: list[str], text: TextModel | None, rng: RngState) -> tuple[TextModel, bool]:
    """Text encoder for conditioning and whether it trains with the SDM."""
    source = config.sdm.conditioning
    if text is not None:
        if text.source != source:
            raise ConfigError(f"Text encoder was trained on {text.source!r} conditioning, config asks for {source!r}.")
        return text, config.text.train_jointly
    if not config.text.train_jointly:
        raise ConfigError("SDM conditioning is requested but no text encoder is available.")
    vocab: Vocabulary = build_vocabulary(texts, config.text.min_freq)
    encoder = TextEncoder.create(config.text.encoder_config(len(vocab)), rng)
    logger.info("Built vocabulary of %d tokens from %d texts", len(vocab), len(texts))
    return TextModel(encoder=encoder, vocab=vocab, source=source), True


def train_sdm(
    config: PipelineConfig,
    data: ImageSet,
    ae: Autoencoder,
    text: TextModel | None = None,
    *,
    progress: TerminalProgress = SILENT,
) -> TrainingResult:
    """Latent denoiser on posterior draws ``z ~ E(x_LR)``, optionally cross-attending to report text."""
    rng = stage_rng(config, "sdm")
    images = resize_batch(data.images, config.geometry.lr_size)
    mu, std = encode_posteriors(ae, images)
    conditioned = config.sdm.conditioning != "none"
    unet = UNetDenoiser.create(config.sdm_unet(conditioned), rng.fork(2))
    if unet.cfg.in_channels != mu.shape[1] or unet.cfg.image_size != mu.shape[2]:
        raise ShapeError(f"SDM expects latents [{unet.cfg.in_channels}, {unet.cfg.image_size}], autoencoder gives {list(mu.shape[1:])}.")
    schedule = config.sdm_schedule()
    param_sets: dict[str, ParamSet] = {"unet": unet.params}

    tokens: list[list[int]] = []
    if conditioned:
        text, joint = _text_model(config, data.texts(config.sdm.conditioning), text, rng.fork(3))
        tokens = [tokenize(text.vocab, item, text.encoder.cfg.max_len) for item in data.texts(config.sdm.conditioning)]
        if joint:
            param_sets["text"] = text.encoder.params

    def loss_fn(index: np.ndarray, loss_rng: RngState) -> Tensor:
        noise = randn(loss_rng, (len(index), *mu.shape[1:]), dtype=mu.dtype).data
        z = Tensor.wrap(mu[index] + std[index] * noise)
        cond = NO_CONDITIONING
        if conditioned:
            cond = Conditioning.embedding(text.encoder.encode_batch([tokens[i] for i in index]))
        return training_loss(z, unet, schedule, loss_rng, cond)

    losses = fit(param_sets, loss_fn, len(images), config.sdm.training, rng, label="train-sdm", progress=progress)
    model = DiffusionModel(unet, config.sdm.schedule, config.sdm.conditioning)
    result = TrainingResult("sdm", diffusion_checkpoint(ModelKind.SDM, model), losses, model=model)
    if conditioned:
        result.text = text_checkpoint(text)
    return result


def _train_sr(
    targets: np.ndarray,
    condition: np.ndarray,
    unet: UNetDenoiser,
    schedule_settings: ScheduleSettings,
    settings: TrainingSettings,
    rng: RngState,
    stage: str,
    progress: TerminalProgress,
) -> TrainingResult:
    if condition.shape != targets.shape:
        raise ShapeError(f"SR conditioning {list(condition.shape)} does not match targets {list(targets.shape)}.")
    schedule = make_schedule(schedule_settings)

    def loss_fn(index: np.ndarray, loss_rng: RngState) -> Tensor:
        cond = Conditioning.concat_image(Tensor.wrap(condition[index]))
        return training_loss(Tensor.wrap(targets[index]), unet, schedule, loss_rng, cond)

    losses = fit({"unet": unet.params}, loss_fn, len(targets), settings, rng, label=stage, progress=progress)
    model = DiffusionModel(unet, schedule_settings)
    return TrainingResult(stage.replace("train-", ""), diffusion_checkpoint(ModelKind.SR, model), losses, model=model)


def sr_condition(x_lr: np.ndarray, hr_size: int) -> np.ndarray:
    """Low-res images brought to the high-res grid for channel concatenation."""
    return resize_batch(x_lr, hr_size)


def train_sr(config: PipelineConfig, data: ImageSet, *, progress: TerminalProgress = SILENT) -> TrainingResult:
    """Super-resolution denoiser conditioned on bicubic-downsampled ``x_HR``."""
    rng = stage_rng(config, "sr")
    hr = config.geometry.hr_size
    targets = resize_batch(data.images, hr)
    condition = sr_condition(resize_batch(targets, config.geometry.lr_size), hr)
    unet = UNetDenoiser.create(config.sr_unet(), rng.fork(2))
    return _train_sr(targets, condition, unet, config.sr.schedule, config.sr.training, rng, "train-sr", progress)


def finetune_sr(
    config: PipelineConfig,
    data: ImageSet,
    ae: Autoencoder,
    sr: DiffusionModel,
    *,
    progress: TerminalProgress = SILENT,
) -> TrainingResult:
    """Continue SR training with ``D(E(bicubic(x_HR)))`` as conditioning (posterior mean)."""
    rng = stage_rng(config, "finetune-sr")
    hr = config.geometry.hr_size
    if sr.denoiser.cfg.image_size != hr:
        raise ShapeError(f"SR checkpoint works at {sr.denoiser.cfg.image_size}px, config asks for {hr}px.")
    targets = resize_batch(data.images, hr)
    mu, _ = encode_posteriors(ae, resize_batch(targets, config.geometry.lr_size))
    condition = sr_condition(np.clip(decode_latents(ae, mu), -1.0, 1.0), hr)
    unet = UNetDenoiser(sr.denoiser.cfg, ParamSet(sr.denoiser.params.arrays()))
    return _train_sr(targets, condition, unet, sr.schedule_settings, config.sr.finetune, rng, "finetune-sr", progress)
