from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np
from scipy import signal

from cheff.errors import DataError, ShapeError


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True, eq=False)
class ImagePair:
    """Reference and candidate images with values in [0, 1]."""

    reference: np.ndarray
    candidate: np.ndarray

    def __post_init__(self) -> None:
        reference = np.asarray(self.reference, dtype=np.float64)
        candidate = np.asarray(self.candidate, dtype=np.float64)
        if reference.shape != candidate.shape:
            raise ShapeError(f"Image shapes differ: {list(reference.shape)} vs {list(candidate.shape)}.")
        for name, image in (("reference", reference), ("candidate", candidate)):
            if image.size == 0 or not np.all((image >= 0.0) & (image <= 1.0)):
                raise DataError(f"{name} image values must lie in [0, 1].")
        object.__setattr__(self, "reference", reference)
        object.__setattr__(self, "candidate", candidate)


def mse(pair: ImagePair) -> float:
    return float(np.mean((pair.reference - pair.candidate) ** 2))


def psnr(pair: ImagePair, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``inf``."""
    error = mse(pair)
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / error)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    return np.outer(taps, taps)


def _planes(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image[None]
    if image.ndim == 3:
        return image
    raise ShapeError(f"SSIM expects [H, W] or [C, H, W] images, got {list(image.shape)}.")


def ssim(pair: ImagePair, peak: float = 1.0) -> float:
    """Mean SSIM over every valid 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    reference = _planes(pair.reference)
    candidate = _planes(pair.candidate)
    if min(reference.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {list(reference.shape[-2:])}.")
    window = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def filtered(plane: np.ndarray) -> np.ndarray:
        return signal.correlate2d(plane, window, mode="valid")

    scores = []
    for x, y in zip(reference, candidate):
        mu_x, mu_y = filtered(x), filtered(y)
        var_x = filtered(x * x) - mu_x * mu_x
        var_y = filtered(y * y) - mu_y * mu_y
        cov = filtered(x * y) - mu_x * mu_y
        numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(numerator / denominator)))
    return float(np.mean(scores))


def pair_metrics(pair: ImagePair) -> dict[str, float]:
    return {"mse": mse(pair), "psnr_db": psnr(pair), "ssim": ssim(pair)}


def aggregate(per_image: Iterable[Mapping[str, float]]) -> dict[str, float]:
    """Arithmetic mean per metric over images.

    Infinite PSNR values (identical pairs) are left out of the PSNR mean and
    counted under ``psnr_infinite``.
    """
    rows = list(per_image)
    if not rows:
        raise DataError("Cannot aggregate metrics over zero images.")
    summary: dict[str, float] = {"count": len(rows)}
    for key in rows[0]:
        values = np.array([row[key] for row in rows], dtype=np.float64)
        if key == "psnr_db":
            finite = values[np.isfinite(values)]
            summary[key] = float(finite.mean()) if finite.size else math.inf
            summary["psnr_infinite"] = int(values.size - finite.size)
        else:
            summary[key] = float(values.mean())
    return summary
