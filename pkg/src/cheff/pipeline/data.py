from __future__ import annotations

import logging
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cheff.datapipe.images import load_image
from cheff.datapipe.index import IndexFile, SampleRecord, read_index
from cheff.datapipe.reports import conditioning_text
from cheff.errors import DataError
from cheff.numeric.random import RngState, permutation
from cheff.numeric.resize import bicubic_resize
from cheff.numeric.tensor import Tensor


logger = logging.getLogger(__name__)


@dataclass
class ImageSet:
    """Standardized model-range images ``[N, 1, size, size]`` with their index records."""

    images: np.ndarray
    records: list[SampleRecord]

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def texts(self, source: str) -> list[str]:
        """Conditioning text per image from reports or labels."""
        if source == "report":
            return [conditioning_text(record.report, None) for record in self.records]
        if source == "labels":
            return [conditioning_text(None, record.labels) for record in self.records]
        return ["" for _ in self.records]


def load_image_set(index: IndexFile | str | Path, size: int, base: str | Path | None = None) -> ImageSet:
    """Read every indexed image, standardized to ``size x size``.

    Record paths resolve against ``base`` (default: the index file's directory).
    """
    if not isinstance(index, IndexFile):
        index_path = Path(index)
        base = base if base is not None else index_path.resolve().parent
        index = read_index(index_path)
    if not index.records:
        raise DataError("The dataset index has no records.")
    root = Path(base) if base is not None else Path.cwd()
    images = np.stack([load_image(root / record.path, size) for record in index.records])
    logger.info("Loaded %d images at %dx%d", len(images), size, size)
    return ImageSet(images=images, records=list(index.records))


def resize_batch(images: np.ndarray, size: int, chunk: int = 64) -> np.ndarray:
    """Bicubic resize of an ``[N, C, H, W]`` batch to ``size x size``."""
    parts = [bicubic_resize(Tensor(images[start : start + chunk]), size, size).data for start in range(0, len(images), chunk)]
    return np.concatenate(parts).astype(images.dtype)


def batches(rng: RngState, count: int, batch_size: int) -> Iterator[np.ndarray]:
    """Endless index batches from successive shuffled epochs; fixed by ``rng``."""
    if count < 1:
        raise DataError("Cannot draw batches from an empty dataset.")
    size = min(batch_size, count)
    order = permutation(rng, count)
    cursor = 0
    while True:
        if cursor + size > count:
            order = permutation(rng, count)
            cursor = 0
        yield order[cursor : cursor + size]
        cursor += size
