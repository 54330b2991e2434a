"""FEMB embedding files.

Layout: magic ``FEMB`` | u32 version=1 | u32 row count n | u32 dim d |
n*d little-endian float32 values, row-major. One file holds one view's
patch features. Writes go through a temp file and an atomic rename so a
crashed run never leaves a half-written embedding behind.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FEMB_MAGIC = b"FEMB"
FEMB_VERSION = 1


class FembError(ValueError):
    """Malformed FEMB content, on either the write or the read side."""


def write_femb(path: str | Path, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise FembError(f"embeddings must be a nonempty 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FembError("refusing to write non-finite embedding values")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(FEMB_MAGIC + struct.pack("<III", FEMB_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())
    tmp.replace(path)


def read_femb(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FEMB_MAGIC:
        raise FembError(f"{path}: not a FEMB file")
    if len(raw) < 16:
        raise FembError(f"{path}: header truncated at {len(raw)} bytes")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != FEMB_VERSION:
        raise FembError(f"{path}: unsupported FEMB version {version}")
    if n == 0 or d == 0:
        raise FembError(f"{path}: degenerate dimensions n={n}, d={d}")
    expected = 16 + 4 * n * d
    if len(raw) < expected:
        raise FembError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw[16:expected], dtype="<f4").reshape(n, d).copy()
