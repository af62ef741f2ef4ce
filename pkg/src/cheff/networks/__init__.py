"""Learnable components: U-net denoiser, autoencoder, text encoder, checkpoints."""
