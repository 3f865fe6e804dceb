"""Binary PPM (P6) / PGM (P5) reading and writing, plus class palettes.

Only maxval 255 is accepted.  Header tokens may be separated by any
whitespace and interleaved with ``#`` comments; exactly one whitespace byte
separates the maxval from the raster.
"""
from __future__ import annotations

import os

import numpy as np


class NetpbmError(ValueError):
    pass


_WS = b" \t\n\r\v\f"


def _parse(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    if data[:2] != magic:
        raise NetpbmError(f"expected magic {magic.decode()}, got {data[:2]!r}")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise NetpbmError("truncated header")
        ch = data[pos:pos + 1]
        if ch in _WS and ch:
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            start = pos
            while pos < len(data) and data[pos:pos + 1] not in _WS and data[pos:pos + 1] != b"#":
                pos += 1
            tok = data[start:pos]
            if not tok.isdigit():
                raise NetpbmError(f"malformed header token {tok!r}")
            tokens.append(int(tok))
    if pos >= len(data) or data[pos:pos + 1] not in _WS:
        raise NetpbmError("missing whitespace after maxval")
    pos += 1
    width, height, maxval = tokens
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise NetpbmError(f"invalid dimensions {width}x{height}")
    need = width * height * channels
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise NetpbmError(f"truncated payload: expected {need} bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)


def _read(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def load_ppm(path: str | os.PathLike) -> np.ndarray:
    """RGB image as a (1, 3, H, W) float32 tensor with values in [0, 1]."""
    px = _parse(_read(path), b"P6", 3)
    return (px.transpose(2, 0, 1)[None].astype(np.float32) / 255.0)


def load_pgm_labels(path: str | os.PathLike) -> np.ndarray:
    """Label map (H, W) of uint8 class indices, taken verbatim (255 = ignore)."""
    return _parse(_read(path), b"P5", 1)[:, :, 0].copy()


def _header(magic: str, h: int, w: int) -> bytes:
    return f"{magic}\n{w} {h}\n255\n".encode("ascii")


def write_ppm(data, path: str | os.PathLike, palette=None) -> None:
    """Write an image tensor (1, 3, H, W) in [0, 1], or a (H, W) label map coloured by ``palette``."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        if palette is None:
            palette = default_palette(int(arr.max()) + 1 if arr.size else 1)
        colors = np.asarray(palette, dtype=np.uint8)
        lut = np.zeros((256, 3), dtype=np.uint8)
        lut[:len(colors)] = colors
        if ((arr != 255) & (arr >= len(colors))).any():
            raise ValueError(f"label map contains classes beyond the {len(colors)}-entry palette")
        rgb = lut[arr.astype(np.uint8)]
    else:
        if arr.ndim == 4:
            if arr.shape[0] != 1:
                raise ValueError("write_ppm writes a single image; got a batch")
            arr = arr[0]
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"expected (1, 3, H, W) image, got {np.shape(data)}")
        rgb = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(_header("P6", h, w))
        f.write(np.ascontiguousarray(rgb).tobytes())


def write_pgm(labels, path: str | os.PathLike) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"expected (H, W) label map, got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("label values must fit in a byte")
    with open(path, "wb") as f:
        f.write(_header("P5", *arr.shape))
        f.write(arr.astype(np.uint8).tobytes())


def default_palette(num_classes: int) -> list[tuple[int, int, int]]:
    """Deterministic, well-separated colours (Pascal-VOC bit interleaving)."""
    out = []
    for k in range(num_classes):
        r = g = b = 0
        c = k
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        out.append((r, g, b))
    return out


def read_palette(path: str | os.PathLike) -> list[tuple[int, int, int]]:
    """Parse ``<class-index> <r> <g> <b>`` lines; indices must cover 0..K-1."""
    entries = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise NetpbmError(f"{path}:{lineno}: expected '<class-index> <r> <g> <b>'")
            idx, *rgb = (int(p) for p in parts)
            if any(not 0 <= v <= 255 for v in rgb):
                raise NetpbmError(f"{path}:{lineno}: colour components must be 0-255")
            entries[idx] = tuple(rgb)
    if sorted(entries) != list(range(len(entries))):
        raise NetpbmError(f"{path}: class indices must be 0..K-1 without gaps")
    return [entries[i] for i in range(len(entries))]


def write_palette(palette, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, (r, g, b) in enumerate(palette):
            f.write(f"{i} {r} {g} {b}\n")
