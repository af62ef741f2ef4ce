"""Training, sampling and evaluation commands over the model stack."""
