from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cheff.config import PipelineConfig
from cheff.datapipe.images import load_image, save_image
from cheff.diffusion.forward import q_sample
from cheff.numeric.random import RngState, randn
from cheff.numeric.tensor import Tensor
from cheff.pipeline.models import load_autoencoder
from cheff.pipeline.training import decode_latents, encode_posteriors
from cheff.schedules import schedule_report, terminal_diagnostic


logger = logging.getLogger(__name__)


@dataclass
class ScheduleDiagnosis:
    fields: list[tuple[str, str]]
    residual_outputs: list[Path]

    def render(self) -> str:
        return "\n".join(f"{key}={value}" for key, value in self.fields)


def diagnose_schedule_cmd(
    config: PipelineConfig,
    *,
    image: str | Path | None = None,
    out_dir: str | Path | None = None,
) -> ScheduleDiagnosis:
    """Terminal diagnostic for the configured SDM schedule.

    With an ``image`` and an autoencoder checkpoint on disk, also writes
    ``D(q_sample(E(image), T))`` next to ``D(E(image))`` so residual
    structure left at ``t = T`` can be inspected.
    """
    schedule = config.sdm_schedule()
    diagnostic = terminal_diagnostic(schedule, config.diagnostic.threshold)
    fields = schedule_report(schedule, diagnostic)
    outputs: list[Path] = []
    if image is not None and Path(config.paths.ae).is_file():
        ae = load_autoencoder(config.paths.ae)
        run_dir = Path(out_dir) if out_dir is not None else Path(config.paths.runs_dir) / "diagnose-schedule"
        x_lr = load_image(image, config.geometry.lr_size)[None]
        mu, _ = encode_posteriors(ae, x_lr)
        eps = randn(RngState(seed=config.seed), mu.shape, dtype=mu.dtype)
        z_t = q_sample(Tensor.wrap(mu), schedule.timesteps, eps, schedule).data
        decoded = np.clip(decode_latents(ae, np.concatenate([mu, z_t])), -1.0, 1.0)
        outputs.append(save_image(run_dir / "residual_t0.pgm", decoded[0]))
        outputs.append(save_image(run_dir / "residual_tT.pgm", decoded[1]))
        fields.append(("residual_outputs", ",".join(path.name for path in outputs)))
        logger.info("Wrote terminal residual decodes to %s", run_dir)
    elif image is not None:
        logger.warning("No autoencoder checkpoint at %s; skipping the residual decode.", config.paths.ae)
    return ScheduleDiagnosis(fields=fields, residual_outputs=outputs)
