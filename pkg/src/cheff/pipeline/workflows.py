"""Reconstruction workflows and inpainting commands built on trained checkpoints.

Workflows (inputs are ``x_HR`` images from the index):

``1a``/``1b``
    ``x_HR -> bicubic -> E -> D -> SR`` with the base / fine-tuned SR model,
    scored against ``x_HR``.
``2``
    ``x_LR -> E -> D``, scored against ``x_LR``.
``3a``/``3b``
    ``x_HR -> bicubic -> SR`` with the base / fine-tuned SR model, scored
    against ``x_HR``.

Encoders use the posterior mean so reconstructions are deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np

from cheff.artifacts import atomic_write_json
from cheff.config import PipelineConfig
from cheff.datapipe.images import from_model_range, load_image, read_pgm, save_image
from cheff.diffusion.conditioning import Conditioning, Denoiser
from cheff.diffusion.inpainting import inpaint, outpaint
from cheff.diffusion.samplers import SamplerConfig, sample
from cheff.errors import ConfigError, ShapeError
from cheff.metrics.reconstruction import ImagePair, aggregate, pair_metrics
from cheff.networks.autoencoder import Autoencoder
from cheff.networks.checkpoint import ModelKind
from cheff.numeric.random import RngState
from cheff.numeric.tensor import Tensor
from cheff.pipeline.cascade import CascadeModels, prompt_conditioning, sample_low_resolution
from cheff.pipeline.data import ImageSet, resize_batch
from cheff.pipeline.manifest import RunManifest
from cheff.pipeline.models import DiffusionModel, load_autoencoder, load_diffusion, load_text
from cheff.pipeline.progress import SILENT, TerminalProgress
from cheff.pipeline.training import decode_latents, encode_posteriors, sr_condition
from cheff.schedules import NoiseSchedule


logger = logging.getLogger(__name__)


class Workflow(StrEnum):
    ae_sr_base = "1a"
    ae_sr_finetuned = "1b"
    ae_only = "2"
    sr_base = "3a"
    sr_finetuned = "3b"

    @property
    def uses_autoencoder(self) -> bool:
        return self in (Workflow.ae_sr_base, Workflow.ae_sr_finetuned, Workflow.ae_only)

    @property
    def sr_stage(self) -> str | None:
        if self in (Workflow.ae_sr_base, Workflow.sr_base):
            return "sr"
        if self in (Workflow.ae_sr_finetuned, Workflow.sr_finetuned):
            return "sr_finetuned"
        return None


class InpaintSpace(StrEnum):
    pixel = "pixel"
    latent = "latent"


@dataclass
class ReconstructionModels:
    ae: Autoencoder | None = None
    sr: DiffusionModel | None = None


def load_reconstruction_models(config: PipelineConfig, workflow: Workflow) -> ReconstructionModels:
    models = ReconstructionModels()
    if workflow.uses_autoencoder:
        models.ae = load_autoencoder(config.paths.ae)
    if workflow.sr_stage is not None:
        models.sr = load_diffusion(getattr(config.paths, workflow.sr_stage), ModelKind.SR)
    return models


def autoencode(ae: Autoencoder, images: np.ndarray) -> np.ndarray:
    """``D(E(x))`` through the posterior mean, clipped to the model range."""
    mu, _ = encode_posteriors(ae, images)
    return np.clip(decode_latents(ae, mu), -1.0, 1.0)


def super_resolve(
    sr: DiffusionModel,
    x_lr: np.ndarray,
    config: PipelineConfig,
    rng: RngState,
    progress: TerminalProgress = SILENT,
    label: str = "sr",
) -> np.ndarray:
    """SR reverse process for each ``[1, lr, lr]`` image, one forked stream per image."""
    cfg = sr.denoiser.cfg
    schedule = sr.schedule
    sampler = config.sampler.build(schedule)
    condition = sr_condition(x_lr, cfg.image_size)
    outputs = []
    for index in range(len(x_lr)):
        x_hr = sample(
            sr.denoiser,
            (1, cfg.out_channels, cfg.image_size, cfg.image_size),
            schedule,
            sampler,
            rng.fork(index),
            Conditioning.concat_image(Tensor.wrap(condition[index : index + 1])),
            progress=progress.steps(f"{label} {index + 1}/{len(x_lr)}"),
        )
        outputs.append(np.clip(x_hr.data[0], -1.0, 1.0))
    return np.stack(outputs)


def _json_safe(row: dict[str, Any]) -> dict[str, Any]:
    return {key: (None if isinstance(value, float) and math.isinf(value) else value) for key, value in row.items()}


def reconstruct(
    config: PipelineConfig,
    data: ImageSet,
    workflow: Workflow | str,
    *,
    models: ReconstructionModels | None = None,
    out_dir: str | Path | None = None,
    progress: TerminalProgress = SILENT,
) -> dict[str, Any]:
    """Run one reconstruction workflow and score it per image and on average.

    Writes ``report_<workflow>.json`` plus a manifest under the run directory and returns
    the report. Infinite PSNR (identical pair) is reported as ``null``.
    """
    workflow = Workflow(workflow)
    models = models or load_reconstruction_models(config, workflow)
    if workflow.uses_autoencoder and models.ae is None:
        raise ConfigError(f"Workflow {workflow.value} needs an autoencoder checkpoint.")
    if workflow.sr_stage is not None and models.sr is None:
        raise ConfigError(f"Workflow {workflow.value} needs the {workflow.sr_stage} checkpoint.")
    if workflow.sr_stage is not None and models.sr.denoiser.cfg.image_size != config.geometry.hr_size:
        raise ShapeError(f"SR checkpoint works at {models.sr.denoiser.cfg.image_size}px, config asks for {config.geometry.hr_size}px.")

    run_dir = Path(out_dir) if out_dir is not None else Path(config.paths.runs_dir) / "reconstruct"
    manifest = RunManifest(command="reconstruct", seed=config.seed, config=config.echo(), parameters={"workflow": workflow.value})
    x_hr = resize_batch(data.images, config.geometry.hr_size)
    x_lr = resize_batch(x_hr, config.geometry.lr_size)
    rng = RngState(seed=config.seed)

    with manifest.stage(f"workflow-{workflow.value}"):
        if workflow == Workflow.ae_only:
            reference, candidate = x_lr, autoencode(models.ae, x_lr)
        else:
            source = autoencode(models.ae, x_lr) if workflow.uses_autoencoder else x_lr
            reference = x_hr
            candidate = super_resolve(models.sr, source, config, rng, progress, f"workflow {workflow.value}")

    rows = []
    for record, ref, cand in zip(data.records, reference, candidate):
        metrics = pair_metrics(ImagePair(from_model_range(ref), from_model_range(cand)))
        rows.append({"path": record.path, **metrics})
    summary = aggregate([{key: row[key] for key in ("mse", "psnr_db", "ssim")} for row in rows])
    report = {
        "workflow": workflow.value,
        "scope": "x_lr" if workflow == Workflow.ae_only else "x_hr",
        "mean": _json_safe(summary),
        "per_image": [_json_safe(row) for row in rows],
    }
    report_path = atomic_write_json(run_dir / f"report_{workflow.value}.json", report)
    manifest.add_output(report_path, run_dir)
    if models.ae is not None and Path(config.paths.ae).is_file():
        manifest.add_checkpoint("ae", config.paths.ae)
    if workflow.sr_stage is not None and Path(getattr(config.paths, workflow.sr_stage)).is_file():
        manifest.add_checkpoint(workflow.sr_stage, getattr(config.paths, workflow.sr_stage))
    manifest.write(run_dir)
    logger.info("Workflow %s over %d images: %s", workflow.value, len(rows), summary)
    return report


def read_mask(path: str | Path, size: int) -> np.ndarray:
    """A PGM mask (maxval = synthesize, 0 = keep) as a ``[1, size, size]`` {0, 1} array."""
    mask = read_pgm(path)
    if mask.shape != (size, size):
        raise ShapeError(f"Mask {path} is {mask.shape[0]}x{mask.shape[1]}, expected {size}x{size}.")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ShapeError(f"Mask {path} must be binary (0 or maxval only).")
    return mask[None]


def nearest_downsample(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resample of a ``[C, H, W]`` mask, sampling source pixel centers."""
    height, width = mask.shape[-2:]
    rows = ((np.arange(size) + 0.5) * height / size).astype(int)
    cols = ((np.arange(size) + 0.5) * width / size).astype(int)
    return mask[..., rows[:, None], cols[None, :]]


def inpaint_cmd(
    config: PipelineConfig,
    image: str | Path,
    mask_file: str | Path,
    space: InpaintSpace | str,
    *,
    variants: int = 1,
    prompt: str | None = None,
    out_dir: str | Path | None = None,
    progress: TerminalProgress = SILENT,
) -> list[Path]:
    """Regenerate the masked region of ``image`` in pixel or latent space.

    Pixel space runs the SR diffusion model at ``x_HR``. Its low-resolution
    condition is built from the unmasked pixels with the masked region
    filled by a fresh cascade draw (SDM -> D), so nothing under the mask
    reaches the sampler; unmasked pixels come back unchanged. Fill and SR
    draw from the streams a cascade sample uses, so a full mask reproduces
    ``sample_one`` on ``RngState(seed).fork(0)``.
    Latent space inpaints ``z = E(x_LR)`` with the mask resampled to the
    latent grid, decodes it and super-resolves the result; ``inpaint_lr_*``
    holds the decoded image before SR. ``variants > 1`` switches to
    outpainting-style independent draws.
    """
    space = InpaintSpace(space)
    if variants < 1:
        raise ConfigError(f"variants must be >= 1, got {variants}.")
    hr, lr = config.geometry.hr_size, config.geometry.lr_size
    run_dir = Path(out_dir) if out_dir is not None else Path(config.paths.runs_dir) / "inpaint"
    manifest = RunManifest(
        command="inpaint",
        seed=config.seed,
        config=config.echo(),
        parameters={"image": Path(image).name, "mask": Path(mask_file).name, "space": space.value, "variants": variants, "prompt": prompt},
    )
    x_hr = load_image(image, hr)[None]
    mask = read_mask(mask_file, hr)
    rng = RngState(seed=config.seed)
    outputs: list[Path] = []

    sr_path = Path(config.paths.sr)
    sr = load_diffusion(sr_path, ModelKind.SR)
    manifest.add_checkpoint("sr", sr_path)
    sr_cfg = sr.denoiser.cfg
    if sr_cfg.image_size != hr:
        raise ShapeError(f"SR checkpoint works at {sr_cfg.image_size}px, config asks for {hr}px.")
    models = _load_latent_models(config, sr, manifest)
    prompt_cond = prompt_conditioning(models, prompt)

    if space == InpaintSpace.pixel:
        stream = rng.fork(0)
        known = Tensor.wrap(x_hr)
        mask_tensor = Tensor.wrap(mask[None].astype(known.dtype))
        with manifest.stage("fill"):
            _, x_fill = sample_low_resolution(models, config, stream, prompt_cond, progress, "inpaint fill")
        hidden = np.where(mask[None].astype(bool), resize_batch(x_fill, hr), x_hr).astype(x_hr.dtype)
        lr_mask = nearest_downsample(mask, lr)[None].astype(bool)
        x_lr = np.where(lr_mask, x_fill, resize_batch(hidden, lr)).astype(x_hr.dtype)
        cond = Conditioning.concat_image(Tensor.wrap(sr_condition(x_lr, hr)))
        schedule = sr.schedule
        with manifest.stage("inpaint"):
            results = _paint(sr.denoiser, known, mask_tensor, schedule, config.sampler.build(schedule), stream.fork(1), variants, cond, progress)
        for index, result in enumerate(results):
            outputs.append(save_image(run_dir / f"inpaint_{index:04d}.pgm", np.clip(result.data[0], -1.0, 1.0)))
    else:
        ae, sdm = models.ae, models.sdm
        mu, _ = encode_posteriors(ae, resize_batch(x_hr, lr))
        latent_mask = np.broadcast_to(nearest_downsample(mask, mu.shape[-1]), mu.shape[1:])[None]
        known = Tensor.wrap(mu)
        mask_tensor = Tensor.wrap(np.ascontiguousarray(latent_mask, dtype=mu.dtype))
        schedule = sdm.schedule
        with manifest.stage("inpaint"):
            latents = _paint(sdm.denoiser, known, mask_tensor, schedule, config.sampler.build(schedule), rng.fork(0), variants, prompt_cond, progress)
        with manifest.stage("decode"):
            decoded = np.concatenate([np.clip(ae.decode(z).data, -1.0, 1.0) for z in latents])
        with manifest.stage("super-resolve"):
            upscaled = super_resolve(sr, decoded, config, rng.fork(1), progress, "inpaint sr")
        for index in range(len(latents)):
            low = save_image(run_dir / f"inpaint_lr_{index:04d}.pgm", decoded[index])
            manifest.add_output(low, run_dir)
            outputs.append(save_image(run_dir / f"inpaint_{index:04d}.pgm", upscaled[index]))

    for path in outputs:
        manifest.add_output(path, run_dir)
    manifest.write(run_dir)
    logger.info("Inpainted %s in %s space into %d file(s)", image, space.value, len(outputs))
    return outputs


def _load_latent_models(config: PipelineConfig, sr: DiffusionModel, manifest: RunManifest) -> CascadeModels:
    ae = load_autoencoder(config.paths.ae)
    manifest.add_checkpoint("ae", config.paths.ae)
    sdm = load_diffusion(config.paths.sdm, ModelKind.SDM)
    manifest.add_checkpoint("sdm", config.paths.sdm)
    text = None
    if sdm.conditioning != "none":
        text = load_text(config.paths.text)
        manifest.add_checkpoint("text", config.paths.text)
    return CascadeModels(ae=ae, sdm=sdm, sr=sr, text=text)


def _paint(
    denoiser: Denoiser,
    known: Tensor,
    mask: Tensor,
    schedule: NoiseSchedule,
    sampler: SamplerConfig,
    rng: RngState,
    variants: int,
    cond: Conditioning,
    progress: TerminalProgress,
) -> list[Tensor]:
    if variants == 1:
        return [inpaint(denoiser, known, mask, schedule, sampler, rng, cond, progress=progress.steps("inpaint"))]
    progress.info(f"Drawing {variants} variants")
    return outpaint(denoiser, known, mask, schedule, sampler, rng, variants, cond)
