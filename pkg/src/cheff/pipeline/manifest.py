from __future__ import annotations

import hashlib
import time
from contextlib import contextmanager
from collections.abc import Iterator
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field

from cheff.artifacts import atomic_write_json
from cheff.errors import DataError


MANIFEST_NAME = "manifest.json"


def content_hash(path: str | Path) -> str:
    """``sha256:<hex>`` of a file's bytes."""
    digest = hashlib.sha256()
    try:
        with Path(path).open("rb") as handle:
            for chunk in iter(lambda: handle.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as exc:
        raise DataError(f"Cannot hash {path}: {exc.strerror}") from exc
    return f"sha256:{digest.hexdigest()}"


class RunManifest(BaseModel):
    """Everything needed to re-run a command; ``stage_seconds`` is the only wall-clock field."""

    command: str
    seed: int
    config: dict[str, Any]
    checkpoints: dict[str, str] = Field(default_factory=dict)
    parameters: dict[str, Any] = Field(default_factory=dict)
    outputs: list[str] = Field(default_factory=list)
    stage_seconds: dict[str, float] = Field(default_factory=dict)

    def add_checkpoint(self, stage: str, path: str | Path) -> None:
        self.checkpoints[stage] = content_hash(path)

    def add_output(self, path: str | Path, run_dir: str | Path) -> None:
        self.outputs.append(Path(path).resolve().relative_to(Path(run_dir).resolve()).as_posix())

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.stage_seconds[name] = round(time.perf_counter() - started, 6)

    def deterministic_view(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude={"stage_seconds"})

    def write(self, run_dir: str | Path) -> Path:
        self.outputs.sort()
        return atomic_write_json(Path(run_dir) / MANIFEST_NAME, self.model_dump(mode="json"))
