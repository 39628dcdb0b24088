"""File formats: CSV matrices, 8-bit PGM exports, the checkpoint container,
and a canonical hash for configuration payloads.

Checkpoint layout (all little-endian):

    magic   4 bytes  b"SNNC"
    version 1 byte   0x01
    count   u32      number of named arrays
    then per array:
        name_len u16, name utf-8 bytes,
        ndim     u8,  dims u32 each,
        data     float64 * prod(dims)

Matrices go to CSV one row per line; floats use ``repr`` (shortest
round-trip form) so identical values always serialize to identical bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ParseError

CHECKPOINT_MAGIC = b"SNNC"
CHECKPOINT_VERSION = 1


def format_float(value: float) -> str:
    return repr(float(value))


def save_matrix_csv(path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lines = [",".join(format_float(v) for v in row) for row in matrix]
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rows.append([float(tok) for tok in line.split(",")])
    if not rows:
        raise ParseError(f"{path}: no rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ParseError(f"{path}: ragged rows with widths {sorted(widths)}")
    return np.array(rows, dtype=np.float64)


def save_pgm(path, matrix: np.ndarray) -> None:
    """Write a matrix as binary 8-bit grayscale, min-max normalized."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("PGM export expects a 2-D matrix")
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        scaled = (m - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(m)
    data = np.rint(scaled).astype(np.uint8)
    header = f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + data.tobytes())


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [CHECKPOINT_MAGIC, bytes([CHECKPOINT_VERSION]), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            chunks.append(struct.pack("<I", dim))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a checkpoint file", offset=0)
    if data[4] != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {data[4]}", offset=4)
    pos = 5

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(data):
            raise ParseError(f"{path}: truncated checkpoint", offset=pos)
        chunk = data[pos : pos + count]
        pos += count
        return chunk

    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
    return arrays


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def stable_hash(payload) -> str:
    """Short hex digest of a canonical JSON encoding of the payload."""
    canonical = json.dumps(_jsonable(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
