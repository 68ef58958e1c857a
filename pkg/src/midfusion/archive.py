"""Weight archives: a length-prefixed JSON index followed by raw float32 data.

Layout (byte-exact, see docs/weight_archive.md)::

    <header length in bytes, ASCII decimal>\\n
    <header: UTF-8 JSON object, exactly that many bytes>
    <payload: little-endian float32 values>

The header maps each tensor name to ``{"dtype": "float32", "shape": [...],
"offset": <byte offset into the payload>}``. Keys are sorted and tensors are
laid out in key order with no padding, so writing the same tensors twice
yields identical bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from torch import nn

PROMPTER_PREFIX = "prompter/"
_DTYPE = np.dtype("<f4")


class ArchiveError(Exception):
    pass


class ArchiveFormatError(ArchiveError):
    pass


class MissingTensorError(ArchiveError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing tensor {name}")


class ShapeMismatchError(ArchiveError):
    def __init__(self, name: str, expected: tuple, found: tuple):
        self.name, self.expected, self.found = name, expected, found
        super().__init__(f"shape mismatch for {name}: expected {list(expected)}, archive has {list(found)}")


class TruncatedPayloadError(ArchiveError):
    pass


@dataclass(frozen=True)
class Entry:
    shape: tuple[int, ...]
    dtype: str
    offset: int

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * _DTYPE.itemsize


@dataclass(frozen=True)
class WeightArchive:
    entries: dict[str, Entry]
    payload: bytes

    def __post_init__(self):
        for name, e in self.entries.items():
            if e.dtype != "float32":
                raise ArchiveFormatError(f"{name}: unsupported dtype {e.dtype!r}")
            if e.offset < 0 or e.offset + e.nbytes > len(self.payload):
                raise TruncatedPayloadError(
                    f"{name}: needs bytes [{e.offset}, {e.offset + e.nbytes}) but payload has {len(self.payload)}")

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self) -> list[str]:
        return sorted(self.entries)

    def array(self, name: str) -> np.ndarray:
        if name not in self.entries:
            raise MissingTensorError(name)
        e = self.entries[name]
        flat = np.frombuffer(self.payload, dtype=_DTYPE, count=e.nbytes // 4, offset=e.offset)
        return flat.reshape(e.shape)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {n[len(prefix):]: self.array(n) for n in self.names() if n.startswith(prefix)}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray | torch.Tensor]) -> "WeightArchive":
        entries, chunks, offset = {}, [], 0
        for name in sorted(arrays):
            a = arrays[name]
            if isinstance(a, torch.Tensor):
                a = a.detach().cpu().numpy()
            data = np.ascontiguousarray(a, dtype=_DTYPE)
            entries[name] = Entry(tuple(int(s) for s in data.shape), "float32", offset)
            chunks.append(data.tobytes())
            offset += data.nbytes
        return cls(entries, b"".join(chunks))

    def to_bytes(self) -> bytes:
        index = {n: {"dtype": e.dtype, "shape": list(e.shape), "offset": e.offset}
                 for n, e in sorted(self.entries.items())}
        header = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return f"{len(header)}\n".encode("ascii") + header + self.payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> "WeightArchive":
        nl = raw.find(b"\n")
        if nl <= 0:
            raise ArchiveFormatError("missing header-length line")
        try:
            hlen = int(raw[:nl].decode("ascii"))
        except ValueError as exc:
            raise ArchiveFormatError(f"bad header-length line {raw[:nl][:32]!r}") from exc
        start = nl + 1
        if hlen < 0 or start + hlen > len(raw):
            raise TruncatedPayloadError(f"header claims {hlen} bytes, file has {len(raw) - start}")
        try:
            index = json.loads(raw[start:start + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ArchiveFormatError(f"header is not valid JSON: {exc}") from exc
        if not isinstance(index, dict):
            raise ArchiveFormatError("header must be a JSON object")
        entries = {}
        for name, spec in index.items():
            try:
                entries[name] = Entry(tuple(int(s) for s in spec["shape"]), str(spec["dtype"]),
                                      int(spec["offset"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ArchiveFormatError(f"bad index entry for {name}: {spec!r}") from exc
        return cls(entries, raw[start + hlen:])


def save_archive(archive: WeightArchive, path: str | Path) -> None:
    Path(path).write_bytes(archive.to_bytes())


def load_archive(path: str | Path) -> WeightArchive:
    return WeightArchive.from_bytes(Path(path).read_bytes())


def module_arrays(module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + n: t.detach().cpu().numpy() for n, t in module.state_dict().items()}


def archive_module(module: nn.Module, prefix: str = "") -> WeightArchive:
    return WeightArchive.from_arrays(module_arrays(module, prefix))


def apply_archive(archive: WeightArchive, module: nn.Module, prefix: str = "") -> None:
    """Copy every tensor of ``module`` from ``archive`` (names under ``prefix``).

    All names and shapes are checked before anything is written, so a failed
    load leaves the module untouched.
    """
    state = module.state_dict()
    for name, t in state.items():
        key = prefix + name
        if key not in archive:
            raise MissingTensorError(key)
        found = archive.entries[key].shape
        if tuple(t.shape) != found:
            raise ShapeMismatchError(key, tuple(t.shape), found)
    with torch.no_grad():
        for name, t in state.items():
            t.copy_(torch.from_numpy(archive.array(prefix + name).copy()).to(t.dtype))
