from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cheff.config import PipelineConfig
from cheff.datapipe.images import save_image
from cheff.datapipe.tokenizer import tokenize
from cheff.diffusion.conditioning import NO_CONDITIONING, Conditioning
from cheff.diffusion.samplers import sample
from cheff.errors import ConfigError
from cheff.networks.autoencoder import Autoencoder
from cheff.networks.checkpoint import ModelKind
from cheff.numeric.io import save_tensor
from cheff.numeric.random import RngState
from cheff.numeric.tensor import Tensor
from cheff.pipeline.data import resize_batch
from cheff.pipeline.manifest import RunManifest
from cheff.pipeline.models import DiffusionModel, TextModel, load_autoencoder, load_diffusion, load_text
from cheff.pipeline.progress import SILENT, TerminalProgress


logger = logging.getLogger(__name__)


@dataclass
class CascadeModels:
    ae: Autoencoder
    sdm: DiffusionModel
    sr: DiffusionModel
    text: TextModel | None = None
    sr_path: Path | None = None


@dataclass
class CascadeSample:
    z: np.ndarray
    x_lr: np.ndarray
    x_hr: np.ndarray


def sr_checkpoint_path(config: PipelineConfig) -> Path:
    """The fine-tuned SR checkpoint when one exists, else the base one."""
    finetuned = Path(config.paths.sr_finetuned)
    return finetuned if finetuned.is_file() else Path(config.paths.sr)


def load_cascade(config: PipelineConfig) -> CascadeModels:
    ae = load_autoencoder(config.paths.ae)
    sdm = load_diffusion(config.paths.sdm, ModelKind.SDM)
    sr_path = sr_checkpoint_path(config)
    sr = load_diffusion(sr_path, ModelKind.SR)
    text = load_text(config.paths.text) if sdm.conditioning != "none" else None
    return CascadeModels(ae=ae, sdm=sdm, sr=sr, text=text, sr_path=sr_path)


def prompt_conditioning(models: CascadeModels, prompt: str | None) -> Conditioning:
    """Cross-attention context for ``prompt``; a conditional SDM without a prompt sees the empty text."""
    if models.sdm.conditioning == "none":
        if prompt:
            raise ConfigError("A prompt was given but the SDM checkpoint is unconditional.")
        return NO_CONDITIONING
    if models.text is None:
        raise ConfigError("The SDM is conditional but no text encoder is loaded.")
    tokens = tokenize(models.text.vocab, prompt or "", models.text.encoder.cfg.max_len)
    return Conditioning.embedding(models.text.encoder.encode_batch([tokens]))


def sample_low_resolution(
    models: CascadeModels,
    config: PipelineConfig,
    rng: RngState,
    cond: Conditioning,
    progress: TerminalProgress = SILENT,
    label: str = "sample",
) -> tuple[Tensor, np.ndarray]:
    """Noise -> latent -> ``x_LR``; the SDM draws from ``rng.fork(0)``."""
    sdm_cfg = models.sdm.denoiser.cfg
    sdm_schedule = models.sdm.schedule
    z = sample(
        models.sdm.denoiser,
        (1, sdm_cfg.in_channels, sdm_cfg.image_size, sdm_cfg.image_size),
        sdm_schedule,
        config.sampler.build(sdm_schedule),
        rng.fork(0),
        cond,
        progress=progress.steps(f"{label} sdm"),
    )
    x_lr = np.clip(models.ae.decode(z).data, -1.0, 1.0)
    return z, x_lr


def sample_one(
    models: CascadeModels,
    config: PipelineConfig,
    rng: RngState,
    cond: Conditioning,
    progress: TerminalProgress = SILENT,
    label: str = "sample",
) -> CascadeSample:
    """Noise -> latent -> ``x_LR`` -> ``x_HR`` for a single image."""
    z, x_lr = sample_low_resolution(models, config, rng, cond, progress, label)
    sr_cfg = models.sr.denoiser.cfg
    condition = resize_batch(x_lr, sr_cfg.image_size)
    sr_schedule = models.sr.schedule
    x_hr = sample(
        models.sr.denoiser,
        (1, sr_cfg.out_channels, sr_cfg.image_size, sr_cfg.image_size),
        sr_schedule,
        config.sampler.build(sr_schedule),
        rng.fork(1),
        Conditioning.concat_image(Tensor.wrap(condition)),
        progress=progress.steps(f"{label} sr"),
    )
    return CascadeSample(z=z.data[0], x_lr=x_lr[0], x_hr=np.clip(x_hr.data[0], -1.0, 1.0))


def sample_cascade(
    config: PipelineConfig,
    n: int,
    prompt: str | None = None,
    *,
    out_dir: str | Path | None = None,
    keep_intermediate: bool = False,
    workers: int = 1,
    models: CascadeModels | None = None,
    progress: TerminalProgress = SILENT,
) -> tuple[list[Path], Path]:
    """Draw ``n`` high-resolution images; returns the image paths and the manifest path.

    Image ``i`` uses ``RngState(seed).fork(i)``, so results do not depend on ``workers``.
    """
    if n < 1:
        raise ConfigError(f"Number of samples must be >= 1, got {n}.")
    run_dir = Path(out_dir) if out_dir is not None else Path(config.paths.runs_dir) / "sample"
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="sample",
        seed=config.seed,
        config=config.echo(),
        parameters={"n": n, "prompt": prompt, "keep_intermediate": keep_intermediate},
    )

    with manifest.stage("load"):
        models = models or load_cascade(config)
        cond = prompt_conditioning(models, prompt)
    for stage, path in (("ae", config.paths.ae), ("sdm", config.paths.sdm), ("sr", models.sr_path)):
        if path is not None and Path(path).is_file():
            manifest.add_checkpoint(stage, path)
    if models.text is not None and Path(config.paths.text).is_file():
        manifest.add_checkpoint("text", config.paths.text)

    master = RngState(seed=config.seed)
    streams = [master.fork(index) for index in range(n)]
    progress.info(f"Sampling {n} image(s) into {run_dir}")

    def run(index: int) -> CascadeSample:
        # one progress line per image would interleave across threads
        reporter = progress if workers == 1 else SILENT
        return sample_one(models, config, streams[index], cond, reporter, f"image {index + 1}/{n}")

    with manifest.stage("sample"):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(run, range(n)))
        else:
            results = [run(index) for index in range(n)]

    outputs: list[Path] = []
    with manifest.stage("write"):
        for index, result in enumerate(results):
            path = save_image(run_dir / f"x_hr_{index:04d}.pgm", result.x_hr)
            outputs.append(path)
            manifest.add_output(path, run_dir)
            if keep_intermediate:
                manifest.add_output(save_image(run_dir / f"x_lr_{index:04d}.pgm", result.x_lr), run_dir)
                manifest.add_output(save_tensor(run_dir / f"z_{index:04d}.ctnsr", Tensor.wrap(result.z)), run_dir)
    manifest_path = manifest.write(run_dir)
    logger.info("Wrote %d samples and %s", n, manifest_path)
    return outputs, manifest_path
