from cheff.metrics.distribution import FeatureStats, feature_stats, frechet_distance, kernel_mmd
from cheff.metrics.reconstruction import ImagePair, aggregate, mse, psnr, ssim

__all__ = [
    "FeatureStats",
    "ImagePair",
    "aggregate",
    "feature_stats",
    "frechet_distance",
    "kernel_mmd",
    "mse",
    "psnr",
    "ssim",
]
