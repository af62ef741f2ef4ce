from cheff.diffusion.conditioning import NO_CONDITIONING, Conditioning, ConditioningKind, Denoiser
from cheff.diffusion.forward import predict_x0, q_sample, training_loss
from cheff.diffusion.inpainting import inpaint, outpaint
from cheff.diffusion.samplers import SamplerConfig, SamplerKind, SigmaChoice, ddim_step, ddpm_step, sample

__all__ = [
    "NO_CONDITIONING",
    "Conditioning",
    "ConditioningKind",
    "Denoiser",
    "SamplerConfig",
    "SamplerKind",
    "SigmaChoice",
    "ddim_step",
    "ddpm_step",
    "inpaint",
    "outpaint",
    "predict_x0",
    "q_sample",
    "sample",
    "training_loss",
]
