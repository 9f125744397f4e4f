"""Netpbm-style image files: binary PGM masks and grayscale PFM float maps."""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .errors import MalformedHeader, TruncatedRecord

_PGM_HEADER = re.compile(rb"^P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s")


def write_pgm(mask: np.ndarray, path: str | os.PathLike) -> None:
    """Write a binary mask as P5 with 0 = background and 255 = foreground."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    h, w = mask.shape
    data = np.where(mask != 0, 255, 0).astype(np.uint8)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a P5 mask back as a uint8 array of 0/1."""
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if m is None:
        raise MalformedHeader("not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise MalformedHeader(f"unsupported maxval {maxval}")
    body = data[m.end():]
    if len(body) < w * h:
        raise TruncatedRecord(f"PGM body has {len(body)} bytes, expected {w * h}")
    img = np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w)
    return (img > 127).astype(np.uint8)


def write_pfm(image: np.ndarray, path: str | os.PathLike) -> None:
    """Write a single-channel float image (little-endian, scale -1.0).

    PFM stores rows bottom-to-top.
    """
    image = np.asarray(image, dtype="<f4")
    if image.ndim != 2:
        raise ValueError("PFM writer handles single-channel images only")
    h, w = image.shape
    Path(path).write_bytes(b"Pf\n%d %d\n-1.0\n" % (w, h) + image[::-1].tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0].strip() != b"Pf":
        raise MalformedHeader("not a grayscale PFM file")
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise MalformedHeader("bad PFM dimensions or scale") from None
    dtype = "<f4" if scale < 0 else ">f4"
    body = parts[3]
    if len(body) < 4 * w * h:
        raise TruncatedRecord(f"PFM body has {len(body)} bytes, expected {4 * w * h}")
    img = np.frombuffer(body, dtype=dtype, count=w * h).reshape(h, w)
    return img[::-1].astype(np.float32)


def _pair_paths(path: Path) -> tuple[Path, Path]:
    stem = path.name
    for suffix in (".pos.pfm", ".neg.pfm", ".pfm"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    return path.with_name(stem + ".pos.pfm"), path.with_name(stem + ".neg.pfm")


def write_surface(channels: np.ndarray, path: str | os.PathLike) -> list[Path]:
    """Write a ``(C, H, W)`` stack: one PFM for C = 1, a ``.pos.pfm``/``.neg.pfm`` pair for C = 2."""
    channels = np.asarray(channels)
    if channels.ndim == 2:
        channels = channels[None]
    path = Path(path)
    if channels.shape[0] == 1:
        write_pfm(channels[0], path)
        return [path]
    if channels.shape[0] != 2:
        raise ValueError(f"expected 1 or 2 channels, got {channels.shape[0]}")
    pos, neg = _pair_paths(path)
    write_pfm(channels[0], pos)
    write_pfm(channels[1], neg)
    return [pos, neg]


def read_surface(path: str | os.PathLike) -> np.ndarray:
    """Inverse of :func:`write_surface`.

    ``path`` may name a single PFM, either member of a pair, or the pair's
    common ``.pfm`` name.
    """
    path = Path(path)
    pos, neg = _pair_paths(path)
    paired = path in (pos, neg) or not path.exists()
    if paired and pos.exists() and neg.exists():
        return np.stack([read_pfm(pos), read_pfm(neg)])
    return read_pfm(path)[None]
