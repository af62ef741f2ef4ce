from __future__ import annotations

import csv
import json
import logging
import os
from abc import ABC, abstractmethod
from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path, PurePath
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from cheff.artifacts import atomic_write_text
from cheff.errors import ConfigError, DataError


logger = logging.getLogger(__name__)

INDEX_VERSION = 1
FRONTAL_VIEWS = frozenset({"AP", "PA"})


class SampleRecord(BaseModel):
    path: str
    source: str
    labels: list[str] | None = None
    report: str | None = None

    @field_validator("path")
    @classmethod
    def validate_path(cls, value: str) -> str:
        if not value or PurePath(value).is_absolute():
            raise ValueError(f"Record path must be a non-empty relative path, got {value!r}.")
        return value

    @field_validator("source")
    @classmethod
    def validate_source(cls, value: str) -> str:
        if not value:
            raise ValueError("Record source must be non-empty.")
        return value


class IndexFile(BaseModel):
    version: int = INDEX_VERSION
    counts: dict[str, int] = Field(default_factory=dict)
    records: list[SampleRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_counts(self) -> "IndexFile":
        tallies = Counter(record.source for record in self.records)
        if dict(tallies) != {source: count for source, count in self.counts.items() if count}:
            raise ValueError(f"Index counts {self.counts} do not match record tallies {dict(tallies)}.")
        return self

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord], sources: Sequence[str] = ()) -> "IndexFile":
        """Sorted by source then path; ``sources`` without records get a zero count."""
        ordered = sorted(records, key=lambda record: (record.source, record.path))
        counts = Counter({name: 0 for name in sources})
        counts.update(record.source for record in ordered)
        return cls(counts=dict(sorted(counts.items())), records=ordered)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n"


class SourceConfig(BaseModel):
    """One dataset root and the adapter that knows its layout."""

    model_config = ConfigDict(extra="forbid")

    name: str
    root: str
    adapter: Literal["directory", "csv"] = "directory"
    manifest: str = "manifest.csv"
    frontal_only: bool = True

    @field_validator("name")
    @classmethod
    def validate_name(cls, value: str) -> str:
        if not value:
            raise ValueError("Source name must be non-empty.")
        return value


class SourceAdapter(ABC):
    adapter_name: str

    def scan(self, source: SourceConfig, base: Path) -> list[SampleRecord]:
        root = Path(source.root)
        if not root.is_dir():
            raise DataError(f"Source {source.name!r}: root {root} is not a readable directory.")
        records = self.load_records(source, root, base)
        seen: set[str] = set()
        for record in records:
            if record.path in seen:
                raise DataError(f"Source {source.name!r}: duplicate path {record.path}.")
            seen.add(record.path)
        logger.info("Source %s: %d records", source.name, len(records))
        return records

    @abstractmethod
    def load_records(self, source: SourceConfig, root: Path, base: Path) -> list[SampleRecord]:
        raise NotImplementedError


def _relative(path: Path, base: Path) -> str:
    return Path(os.path.relpath(path.resolve(), base.resolve())).as_posix()


def _read_text(path: Path) -> str | None:
    if not path.is_file():
        return None
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"Cannot read {path}: {exc}") from exc


class DirectoryAdapter(SourceAdapter):
    """``*.pgm`` images with optional ``<stem>.labels`` and ``<stem>.txt`` sidecars; all frontal."""

    adapter_name = "directory"

    def load_records(self, source: SourceConfig, root: Path, base: Path) -> list[SampleRecord]:
        records = []
        for image in sorted(root.rglob("*.pgm")):
            labels_text = _read_text(image.with_suffix(".labels"))
            labels = None
            if labels_text is not None:
                labels = [line.strip() for line in labels_text.splitlines() if line.strip()]
            records.append(
                SampleRecord(
                    path=_relative(image, base),
                    source=source.name,
                    labels=labels,
                    report=_read_text(image.with_suffix(".txt")),
                )
            )
        return records


class CsvAdapter(SourceAdapter):
    """CSV manifest with ``path``, ``view`` and optional ``labels`` (``|``-separated) and ``report`` columns."""

    adapter_name = "csv"

    def load_records(self, source: SourceConfig, root: Path, base: Path) -> list[SampleRecord]:
        manifest = root / source.manifest
        try:
            with manifest.open("r", encoding="utf-8", newline="") as handle:
                rows = list(csv.DictReader(handle))
        except OSError as exc:
            raise DataError(f"Source {source.name!r}: cannot read manifest {manifest}: {exc.strerror}") from exc

        records = []
        for row in rows:
            relative = str(row.get("path", "") or "").strip()
            if not relative:
                continue
            view = str(row.get("view", "") or "").strip().upper()
            if source.frontal_only and view not in FRONTAL_VIEWS:
                continue
            labels_cell = str(row.get("labels", "") or "").strip()
            report = str(row.get("report", "") or "").strip()
            records.append(
                SampleRecord(
                    path=_relative(root / relative, base),
                    source=source.name,
                    labels=[label.strip() for label in labels_cell.split("|") if label.strip()] or None,
                    report=report or None,
                )
            )
        return records


ADAPTERS: dict[str, SourceAdapter] = {
    "directory": DirectoryAdapter(),
    "csv": CsvAdapter(),
}


def build_index(
    sources: Sequence[SourceConfig],
    output: str | Path | None = None,
    *,
    max_workers: int = 4,
) -> IndexFile:
    """Scan every source (concurrently) and merge into one sorted index.

    Record paths are relative to the index file's directory (the current
    directory when no output is given).
    """
    names = [source.name for source in sources]
    if len(set(names)) != len(names):
        raise ConfigError(f"Source names must be unique: {names}")
    base = Path(output).resolve().parent if output is not None else Path.cwd()
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        batches = list(executor.map(lambda source: ADAPTERS[source.adapter].scan(source, base), sources))
    index = IndexFile.from_records([record for batch in batches for record in batch], names)
    if output is not None:
        atomic_write_text(output, index.to_json())
        logger.info("Wrote index with %d records to %s", len(index.records), output)
    return index


def read_index(path: str | Path) -> IndexFile:
    target = Path(path)
    try:
        payload = target.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"Cannot read index {target}: {exc.strerror}") from exc
    try:
        return IndexFile.model_validate_json(payload)
    except ValidationError as exc:
        raise DataError(f"Invalid index {target}: {exc.errors()[0]['msg']}") from exc
