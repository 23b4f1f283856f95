"""Deterministic serialization helpers.

Every float is written with fixed 6-decimal formatting and every file
ends in a single newline, so identical object models produce identical
bytes on any platform.
"""

from __future__ import annotations

import json
from pathlib import Path

__all__ = ["format_float", "dumps", "dump_json", "write_csv"]


def format_float(x: float) -> str:
    if x == 0.0:
        x = 0.0  # normalize -0.0
    return f"{x:.6f}"


def _encode(value, indent: int, level: int) -> str:
    pad = " " * (indent * level)
    inner = " " * (indent * (level + 1))
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=True)
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [_encode(v, indent, level + 1) for v in value]
        return "[\n" + ",\n".join(inner + it for it in items) + "\n" + pad + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = []
        for k, v in value.items():
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be strings, got {type(k).__name__}")
            items.append(inner + json.dumps(k, ensure_ascii=True) + ": " + _encode(v, indent, level + 1))
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize value of type {type(value).__name__}")


def dumps(value, indent: int = 2) -> str:
    return _encode(value, indent, 0) + "\n"


def dump_json(value, path: str | Path, indent: int = 2) -> None:
    Path(path).write_text(dumps(value, indent=indent), encoding="utf-8", newline="\n")


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Plain comma-separated output with the shared float formatting."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, bool):
                cells.append("true" if cell else "false")
            elif isinstance(cell, float):
                cells.append(format_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
