from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import numpy as np

from cheff.datapipe.images import read_pgm
from cheff.errors import DataError, ShapeError
from cheff.metrics.distribution import feature_stats, frechet_distance, kernel_mmd
from cheff.metrics.reconstruction import ImagePair, aggregate, pair_metrics
from cheff.pipeline.data import resize_batch


FEATURE_SIZE = 8


def image_files(target: str | Path) -> list[Path]:
    """A single PGM file, or every ``*.pgm`` in a directory sorted by name."""
    path = Path(target)
    if path.is_dir():
        files = sorted(path.glob("*.pgm"))
        if not files:
            raise DataError(f"No .pgm images in {path}.")
        return files
    if not path.is_file():
        raise DataError(f"Image path not found: {path}")
    return [path]


def pairwise_report(reference: str | Path, candidate: str | Path) -> dict[str, float]:
    """Mean MSE / PSNR / SSIM over images paired by file name."""
    references = image_files(reference)
    candidates = image_files(candidate)
    if len(references) == 1 and len(candidates) == 1:
        pairs = [(references[0], candidates[0])]
    else:
        by_name = {path.name: path for path in candidates}
        missing = [path.name for path in references if path.name not in by_name]
        if missing:
            raise DataError(f"Candidates missing for {', '.join(missing)}.")
        pairs = [(path, by_name[path.name]) for path in references]
    return aggregate(pair_metrics(ImagePair(read_pgm(ref), read_pgm(cand))) for ref, cand in pairs)


def image_features(paths: Sequence[Path], size: int = FEATURE_SIZE) -> np.ndarray:
    """Images bicubic-downsampled to ``size x size`` and flattened, one row per image."""
    images = [read_pgm(path) for path in paths]
    shapes = {image.shape for image in images}
    if len(shapes) != 1:
        raise ShapeError(f"Feature images must share one geometry, got {sorted(shapes)}.")
    batch = np.stack(images)[:, None]
    return resize_batch(batch, size).reshape(len(images), -1).astype(np.float64)


def distribution_report(set_a: str | Path, set_b: str | Path) -> dict[str, float]:
    features_a = image_features(image_files(set_a))
    features_b = image_features(image_files(set_b))
    return {
        "count_a": len(features_a),
        "count_b": len(features_b),
        "frechet": frechet_distance(feature_stats(features_a), feature_stats(features_b)),
        "mmd2": kernel_mmd(features_a, features_b),
    }
