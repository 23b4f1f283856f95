"""Binary fixture formats for tensors and named weight containers.

Single tensor record ("MSTF"):
    magic ``MSTF`` | u32 version (=1) | u32 ndim | u32 dims[ndim] | f32 data

Named container ("MSWT"):
    magic ``MSWT`` | u32 version (=1) | u32 count | count x entry
    entry: u32 name length | UTF-8 name | embedded MSTF record

All integers are little-endian; data is row-major float32. In memory the
values are held as float64, so a written tensor reads back as the exact
float32 value it was rounded to.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .kernel import Tensor

__all__ = [
    "FixtureFormatError",
    "TENSOR_MAGIC",
    "CONTAINER_MAGIC",
    "FORMAT_VERSION",
    "read_tensor",
    "write_tensor",
    "read_named_tensors",
    "write_named_tensors",
]

TENSOR_MAGIC = b"MSTF"
CONTAINER_MAGIC = b"MSWT"
FORMAT_VERSION = 1

_MAX_NDIM = 16
_MAX_NAME = 4096


class FixtureFormatError(ValueError):
    """Raised when a fixture file is malformed; names the offending field."""


def _read_exact(f: BinaryIO, n: int, field: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FixtureFormatError(f"{field}: expected {n} bytes, got {len(data)}")
    return data


def _read_u32(f: BinaryIO, field: str) -> int:
    return struct.unpack("<I", _read_exact(f, 4, field))[0]


def _write_tensor_record(f: BinaryIO, t: Tensor) -> None:
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<I", FORMAT_VERSION))
    f.write(struct.pack("<I", len(t.shape)))
    f.write(struct.pack(f"<{len(t.shape)}I", *t.shape))
    f.write(np.ascontiguousarray(t.array, dtype="<f4").tobytes())


def _read_tensor_record(f: BinaryIO, context: str = "tensor") -> Tensor:
    magic = _read_exact(f, 4, f"{context}.magic")
    if magic != TENSOR_MAGIC:
        raise FixtureFormatError(f"{context}.magic: expected {TENSOR_MAGIC!r}, got {magic!r}")
    version = _read_u32(f, f"{context}.version")
    if version != FORMAT_VERSION:
        raise FixtureFormatError(f"{context}.version: unsupported version {version}")
    ndim = _read_u32(f, f"{context}.ndim")
    if not (1 <= ndim <= _MAX_NDIM):
        raise FixtureFormatError(f"{context}.ndim: implausible value {ndim}")
    dims = []
    for i in range(ndim):
        d = _read_u32(f, f"{context}.dims[{i}]")
        if d < 1:
            raise FixtureFormatError(f"{context}.dims[{i}]: dimension must be >= 1, got {d}")
        dims.append(d)
    count = int(np.prod(dims))
    raw = _read_exact(f, 4 * count, f"{context}.data")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return Tensor(values, shape=dims)


def write_tensor(path: str | Path, t: Tensor) -> None:
    with open(path, "wb") as f:
        _write_tensor_record(f, t)


def read_tensor(path: str | Path) -> Tensor:
    with open(path, "rb") as f:
        t = _read_tensor_record(f)
        if f.read(1):
            raise FixtureFormatError("trailing: unexpected bytes after tensor record")
    return t


def write_named_tensors(path: str | Path, tensors: Mapping[str, Tensor]) -> None:
    """Write a name->tensor mapping; entry order follows the mapping order."""
    with open(path, "wb") as f:
        f.write(CONTAINER_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            _write_tensor_record(f, t)


def read_named_tensors(path: str | Path) -> dict[str, Tensor]:
    """Read a container; returns tensors in file order, names must be unique."""
    out: dict[str, Tensor] = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CONTAINER_MAGIC:
            raise FixtureFormatError(f"magic: expected {CONTAINER_MAGIC!r}, got {magic!r}")
        version = _read_u32(f, "version")
        if version != FORMAT_VERSION:
            raise FixtureFormatError(f"version: unsupported version {version}")
        count = _read_u32(f, "count")
        for i in range(count):
            name_len = _read_u32(f, f"entry[{i}].name_length")
            if name_len > _MAX_NAME:
                raise FixtureFormatError(f"entry[{i}].name_length: implausible value {name_len}")
            raw = _read_exact(f, name_len, f"entry[{i}].name")
            try:
                name = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FixtureFormatError(f"entry[{i}].name: invalid UTF-8") from exc
            if name in out:
                raise FixtureFormatError(f"entry[{i}].name: duplicate name {name!r}")
            out[name] = _read_tensor_record(f, context=f"entry[{i}]")
        if f.read(1):
            raise FixtureFormatError("trailing: unexpected bytes after last entry")
    return out
