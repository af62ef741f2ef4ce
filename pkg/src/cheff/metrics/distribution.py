from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from cheff.errors import ShapeError


@dataclass(frozen=True, eq=False)
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        covariance = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if covariance.shape != (mean.size, mean.size):
            raise ShapeError(f"Covariance {list(covariance.shape)} does not match mean of size {mean.size}.")
        if not np.allclose(covariance, covariance.T, rtol=0.0, atol=1e-10):
            raise ShapeError("Covariance must be symmetric.")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)

    @property
    def dim(self) -> int:
        return int(self.mean.size)


def _feature_matrix(features: Sequence[Sequence[float]] | np.ndarray, minimum: int = 2) -> np.ndarray:
    matrix = np.asarray(features, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeError(f"Features must be a list of equal-length vectors, got shape {list(matrix.shape)}.")
    if matrix.shape[0] < minimum:
        raise ShapeError(f"Need at least {minimum} feature vectors, got {matrix.shape[0]}.")
    return matrix


def feature_stats(features: Sequence[Sequence[float]] | np.ndarray) -> FeatureStats:
    """Sample mean and unbiased covariance."""
    matrix = _feature_matrix(features)
    covariance = np.atleast_2d(np.cov(matrix, rowvar=False, ddof=1))
    covariance = (covariance + covariance.T) / 2.0
    return FeatureStats(mean=matrix.mean(axis=0), covariance=covariance, count=matrix.shape[0])


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh(matrix)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` between Gaussian fits.

    The trace of ``(S_a S_b)^(1/2)`` is taken from the symmetric product
    ``S_a^(1/2) S_b S_a^(1/2)``, whose eigenvalues are clipped at zero.
    """
    if a.dim != b.dim:
        raise ShapeError(f"Feature dimensions differ: {a.dim} vs {b.dim}.")
    if a.count < 2 or b.count < 2:
        raise ShapeError("Fréchet distance needs statistics over at least 2 samples each.")
    root_a = _psd_sqrt(a.covariance)
    middle = root_a @ b.covariance @ root_a
    cross_trace = float(np.sqrt(np.clip(linalg.eigvalsh((middle + middle.T) / 2.0), 0.0, None)).sum())
    delta = a.mean - b.mean
    value = float(delta @ delta + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * cross_trace)
    return max(value, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``(x^T y / d + 1)^3`` for every row pair."""
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kernel_mmd(features_a: Sequence[Sequence[float]] | np.ndarray, features_b: Sequence[Sequence[float]] | np.ndarray) -> float:
    """Unbiased MMD^2 with the cubic polynomial kernel."""
    x = _feature_matrix(features_a)
    y = _feature_matrix(features_b)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"Feature dimensions differ: {x.shape[1]} vs {y.shape[1]}.")
    m, n = x.shape[0], y.shape[0]
    k_xx = polynomial_kernel(x, x)
    k_yy = polynomial_kernel(y, y)
    k_xy = polynomial_kernel(x, y)
    term_xx = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    term_yy = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    return float(term_xx + term_yy - 2.0 * k_xy.mean())
