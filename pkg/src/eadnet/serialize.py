"""EADW binary tensor container.

Layout (all integers u32 little-endian)::

    b"EADW" | version | count | count x (name_len | utf-8 name | rank | dims... | f32-le payload)
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"EADW"
VERSION = 1


class WeightFormatError(ValueError):
    """The file is not a well-formed EADW container."""


def dump_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def load_tensors(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise WeightFormatError(f"truncated file: needed {n} bytes at offset {pos}, only {len(view) - pos} left")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise WeightFormatError("bad magic: not an EADW weight file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise WeightFormatError(f"unsupported format version {version} (expected {VERSION})")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"tensor name is not valid UTF-8: {exc}") from exc
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        if name in out:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        out[name] = arr
    if pos != len(view):
        raise WeightFormatError(f"{len(view) - pos} trailing bytes after the last tensor")
    return out


def write_tensors(path: str | os.PathLike, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(dump_tensors(tensors))


def read_tensors(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return load_tensors(f.read())
