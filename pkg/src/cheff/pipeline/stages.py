from __future__ import annotations

import logging
from pathlib import Path

from cheff.config import PipelineConfig
from cheff.errors import ConfigError
from cheff.networks.checkpoint import ModelKind, write_checkpoint
from cheff.pipeline.data import load_image_set
from cheff.pipeline.manifest import RunManifest
from cheff.pipeline.models import load_autoencoder, load_diffusion, load_text
from cheff.pipeline.progress import SILENT, TerminalProgress
from cheff.pipeline.training import TrainingResult, finetune_sr, train_ae, train_sdm, train_sr


logger = logging.getLogger(__name__)

# command -> config path field receiving the trained checkpoint
TRAINING_STAGES = {
    "train-ae": "ae",
    "train-sdm": "sdm",
    "train-sr": "sr",
    "finetune-sr": "sr_finetuned",
}


def run_training_stage(
    config: PipelineConfig,
    command: str,
    *,
    index: str | Path | None = None,
    out_dir: str | Path | None = None,
    progress: TerminalProgress = SILENT,
) -> TrainingResult:
    """Load inputs, train one stage and persist checkpoint, loss curve and manifest."""
    if command not in TRAINING_STAGES:
        raise ConfigError(f"Unknown training stage {command!r}; expected one of {sorted(TRAINING_STAGES)}.")
    paths = config.paths
    run_dir = Path(out_dir) if out_dir is not None else Path(paths.runs_dir) / command
    manifest = RunManifest(command=command, seed=config.seed, config=config.echo())
    index_path = Path(index) if index is not None else Path(paths.index)
    size = config.geometry.lr_size if command in ("train-ae", "train-sdm") else config.geometry.hr_size

    with manifest.stage("load"):
        data = load_image_set(index_path, size)
        manifest.parameters.update({"index": index_path.name, "images": len(data)})
        if command == "train-sdm":
            ae = load_autoencoder(paths.ae)
            manifest.add_checkpoint("ae", paths.ae)
            text = None
            if config.sdm.conditioning != "none" and not config.text.train_jointly:
                text = load_text(paths.text)
                manifest.add_checkpoint("text", paths.text)
        elif command == "finetune-sr":
            ae = load_autoencoder(paths.ae)
            manifest.add_checkpoint("ae", paths.ae)
            sr = load_diffusion(paths.sr, ModelKind.SR)
            manifest.add_checkpoint("sr", paths.sr)

    progress.info(f"{command}: {len(data)} images at {size}x{size}")
    with manifest.stage("train"):
        if command == "train-ae":
            result = train_ae(config, data, progress=progress)
        elif command == "train-sdm":
            result = train_sdm(config, data, ae, text, progress=progress)
        elif command == "train-sr":
            result = train_sr(config, data, progress=progress)
        else:
            result = finetune_sr(config, data, ae, sr, progress=progress)

    with manifest.stage("write"):
        target_field = TRAINING_STAGES[command]
        checkpoint_path = write_checkpoint(getattr(paths, target_field), result.checkpoint)
        curve = result.write_loss_curve(checkpoint_path.parent)
        manifest.add_checkpoint(target_field, checkpoint_path)
        if result.text is not None and config.text.train_jointly:
            text_path = write_checkpoint(paths.text, result.text)
            manifest.add_checkpoint("text", text_path)
        manifest.parameters.update(
            {
                "steps": len(result.losses),
                "loss_curve": curve.name,
                "final_loss": result.losses[-1] if result.losses else None,
            }
        )
    manifest_path = manifest.write(run_dir)
    logger.info("%s wrote %s (manifest %s)", command, checkpoint_path, manifest_path)
    return result
