"""Versioned binary checkpoints for parameter sets.

Layout (all integers little-endian u32):

    magic ``TMCK`` | version | config_len | config JSON (UTF-8, sorted keys)
    | param_count | entries... | crc32 of everything before it

Each entry: name_len | name UTF-8 | rank | dims (u32 each) | values as
float64 little-endian, row-major. Loading preserves entry order, so
``save(load(x))`` is byte-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import DataError

CHECKPOINT_MAGIC = b"TMCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, config: dict, params: dict[str, np.ndarray]) -> None:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    config_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf += struct.pack("<I", len(config_bytes))
    buf += config_bytes
    buf += struct.pack("<I", len(params))
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<I", len(name_bytes))
        buf += name_bytes
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    try:
        Path(path).write_bytes(bytes(buf))
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataError(f"checkpoint {self.path} is truncated")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint file (bad magic)")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise DataError(f"checkpoint {path} failed its checksum (corrupt file)")

    reader = _Reader(raw[:-4], path)
    reader.take(4)  # magic
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    config_len = reader.u32()
    try:
        config = json.loads(reader.take(config_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"checkpoint {path} has a malformed config block: {exc}") from exc

    params: OrderedDict[str, np.ndarray] = OrderedDict()
    count = reader.u32()
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = tuple(reader.u32() for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(dims)
        params[name] = values.astype(np.float64)
    if reader.pos != len(reader.raw):
        raise DataError(f"checkpoint {path} has {len(reader.raw) - reader.pos} trailing bytes")
    return config, params
