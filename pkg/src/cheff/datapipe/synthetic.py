from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cheff.artifacts import atomic_write_text
from cheff.datapipe.images import write_pgm
from cheff.numeric.random import RngState


logger = logging.getLogger(__name__)

SHAPES = ("ellipse", "rectangle")
_REGIONS = {(0, 0): "upper left", (0, 1): "upper right", (1, 0): "lower left", (1, 1): "lower right"}


@dataclass(frozen=True)
class Shape:
    kind: str
    center: tuple[float, float]
    radii: tuple[float, float]
    intensity: float

    @property
    def region(self) -> str:
        return _REGIONS[(int(self.center[0] >= 0.5), int(self.center[1] >= 0.5))]


def draw_shapes(rng: RngState, size: int, max_shapes: int = 3) -> tuple[np.ndarray, list[Shape]]:
    """Random bright ellipses and rectangles on a dark, slightly noisy background."""
    generator = rng.generator()
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    rows = (rows + 0.5) / size
    cols = (cols + 0.5) / size
    image = np.full((size, size), 0.08) + generator.normal(0.0, 0.01, size=(size, size))
    shapes = []
    for _ in range(int(generator.integers(1, max_shapes, endpoint=True))):
        shape = Shape(
            kind=SHAPES[int(generator.integers(0, len(SHAPES)))],
            center=(float(generator.uniform(0.2, 0.8)), float(generator.uniform(0.2, 0.8))),
            radii=(float(generator.uniform(0.08, 0.25)), float(generator.uniform(0.08, 0.25))),
            intensity=float(generator.uniform(0.5, 0.95)),
        )
        dy = (rows - shape.center[0]) / shape.radii[0]
        dx = (cols - shape.center[1]) / shape.radii[1]
        if shape.kind == "ellipse":
            inside = dy * dy + dx * dx <= 1.0
        else:
            inside = (np.abs(dy) <= 1.0) & (np.abs(dx) <= 1.0)
        image = np.where(inside, shape.intensity, image)
        shapes.append(shape)
    return np.clip(image, 0.0, 1.0), shapes


def describe(shapes: list[Shape]) -> str:
    """Report text in FINDINGS / IMPRESSION form naming every drawn shape."""
    findings = " ".join(f"A bright {shape.kind} in the {shape.region}." for shape in shapes)
    kinds = sorted({shape.kind for shape in shapes})
    impression = f"{len(shapes)} {'opacity' if len(shapes) == 1 else 'opacities'}: {', '.join(kinds)}."
    return f"INDICATION: synthetic study.\nFINDINGS: {findings}\nIMPRESSION: {impression}\n"


def generate_corpus(
    root: str | Path,
    sources: Mapping[str, int],
    size: int = 32,
    seed: int = 0,
    *,
    with_reports: bool = True,
    with_labels: bool = True,
) -> dict[str, int]:
    """Write ``<root>/<source>/img_NNNN.pgm`` plus sidecars for each source.

    Image ``i`` of the ``k``-th source (in sorted name order) is drawn from
    ``RngState(seed).fork(k).fork(i)``, so a corpus is reproducible per seed.
    """
    base = Path(root)
    master = RngState(seed=seed)
    written: dict[str, int] = {}
    for source_index, name in enumerate(sorted(sources)):
        source_rng = master.fork(source_index)
        directory = base / name
        for index in range(sources[name]):
            image, shapes = draw_shapes(source_rng.fork(index), size)
            stem = directory / f"img_{index:04d}"
            write_pgm(stem.with_suffix(".pgm"), image)
            if with_reports:
                atomic_write_text(stem.with_suffix(".txt"), describe(shapes))
            if with_labels:
                atomic_write_text(stem.with_suffix(".labels"), "\n".join(sorted({s.kind for s in shapes})) + "\n")
        written[name] = sources[name]
        logger.info("Synthetic source %s: %d images in %s", name, sources[name], directory)
    return written
