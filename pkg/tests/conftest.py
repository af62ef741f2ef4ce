from __future__ import annotations

import sys
from pathlib import Path

import pytest


ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"

if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))


@pytest.fixture(scope="session")
def shipped_config_path() -> Path:
    return ROOT / "config" / "cheff.toml"


@pytest.fixture(scope="session")
def make_corpus():
    """Factory writing a one-source synthetic corpus plus ``data/index.json`` under a root."""
    from cheff.datapipe.index import SourceConfig, build_index
    from cheff.datapipe.synthetic import generate_corpus

    def make(root: Path, count: int, *, size: int = 32, seed: int = 0) -> Path:
        images = root / "data" / "images"
        generate_corpus(images, {"synthetic": count}, size=size, seed=seed)
        index = root / "data" / "index.json"
        build_index([SourceConfig(name="synthetic", root=str(images / "synthetic"))], index)
        return index

    return make
