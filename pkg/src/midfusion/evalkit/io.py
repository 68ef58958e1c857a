"""Box files, attribute files and benchmark manifests.

Box file: one frame per line, ``x,y,w,h`` (integers or decimals). Attribute
file: one line of space-separated 0/1 flags. Manifest: one sequence per
line, ``<sequence dir> <gt file> [<gt file>]`` with paths relative to the
manifest; ``visible.txt`` is the visible ground truth and ``infrared.txt``
the thermal one. ``schema = lasher|rgbt234`` may appear on its own line;
``#`` starts a comment.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attributes import SCHEMAS, SchemaError, check_flags
from .metrics import SequenceRecord

VISIBLE_GT = "visible.txt"
THERMAL_GT = "infrared.txt"
ATTRIBUTE_FILE = "attributes.txt"


class DataError(ValueError):
    pass


def read_boxes(path: str | Path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.replace("\t", ",").replace(" ", ",").split(",")
        parts = [p for p in parts if p]
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def format_box(box) -> str:
    return ",".join(f"{float(v):.4f}" for v in box)


def write_boxes(path: str | Path, boxes) -> None:
    Path(path).write_text("".join(format_box(b) + "\n" for b in boxes), encoding="utf-8")


def read_attributes(path: str | Path, schema: str) -> tuple[int, ...]:
    text = Path(path).read_text(encoding="utf-8").split()
    try:
        return check_flags([int(t) for t in text], schema)
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    directory: Path
    gt_files: tuple[str, ...]


@dataclass(frozen=True)
class Manifest:
    schema: str
    entries: tuple[ManifestEntry, ...]


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    root = path.parent
    schema = "lasher"
    entries = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.replace(" ", "").startswith("schema="):
            schema = line.split("=", 1)[1].strip()
            if schema not in SCHEMAS:
                raise SchemaError(f"{path}:{lineno}: unknown schema {schema!r}")
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: expected '<dir> <gt file> [<gt file>]'")
        d = root / parts[0]
        entries.append(ManifestEntry(Path(parts[0]).name, d, tuple(parts[1:])))
    return Manifest(schema, tuple(entries))


def load_benchmark(manifest_path: str | Path, results_dir: str | Path) -> tuple[list[SequenceRecord], str]:
    """Pair every manifest sequence with ``<results_dir>/<name>.txt``."""
    manifest = read_manifest(manifest_path)
    records = []
    for e in manifest.entries:
        res = Path(results_dir) / f"{e.name}.txt"
        if not res.exists():
            raise DataError(f"missing result file {res}")
        pred = read_boxes(res)
        gt_v = read_boxes(e.directory / VISIBLE_GT) if VISIBLE_GT in e.gt_files else None
        if gt_v is None:
            raise DataError(f"{e.name}: manifest lists no {VISIBLE_GT}")
        gt_t = read_boxes(e.directory / THERMAL_GT) if THERMAL_GT in e.gt_files else None
        attr_path = e.directory / ATTRIBUTE_FILE
        attrs = read_attributes(attr_path, manifest.schema) if attr_path.exists() else None
        if len(pred) != len(gt_v):
            raise DataError(f"{e.name}: results={len(pred)} visible_gt={len(gt_v)} frame counts differ")
        records.append(SequenceRecord(e.name, pred, gt_v, gt_t, attrs, manifest.schema))
    return records, manifest.schema


def write_manifest(path: str | Path, entries: list[tuple[str, list[str]]], schema: str = "lasher") -> None:
    lines = [f"schema = {schema}"] + [f"{d} {' '.join(files)}" for d, files in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
