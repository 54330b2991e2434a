"""Patch rasterization, the deterministic toy encoder, and embedding file IO.

Pixel rasterization happens only here: every rect-to-pixel conversion in the
toolkit goes through ``pixel_bounds`` (floor on the min corner, ceil on the
max corner), which external feature producers must match.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np

from .geometry import ImageExtent, Rect
from .patches import PatchSet

TOY_GRID = 8
TOY_DIM = TOY_GRID * TOY_GRID * 3

FEMB_MAGIC = b"FEMB"
FEMB_VERSION = 1

ZERO_NORM_EPS = 1e-12


class EmptyPatch(ValueError):
    """Raised for a patch with zero pixel rows or columns."""


class BadMagic(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class NonFiniteValue(ArithmeticError):
    pass


class ZeroNormWarning(UserWarning):
    """A feature row had (near-)zero norm and was replaced by e1."""


@dataclass
class PixelPatch:
    """RGB pixel block, shape (height, width, 3), dtype uint8."""

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixel data, got shape {a.shape}")
        if a.shape[0] == 0 or a.shape[1] == 0:
            raise EmptyPatch(f"degenerate pixel patch of shape {a.shape}")
        if a.dtype != np.uint8:
            raise ValueError(f"pixel data must be uint8, got {a.dtype}")
        self.data = a

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])


@dataclass
class FeatureMap:
    """n feature rows of dimension d."""

    n: int
    d: int
    values: np.ndarray
    normalized: bool = False
    zero_rows_fixed: int = 0

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if v.shape != (self.n, self.d):
            raise ValueError(f"values shape {v.shape} does not match (n={self.n}, d={self.d})")
        self.values = v


def pixel_bounds(rect: Rect, extent: ImageExtent) -> Tuple[int, int, int, int]:
    """Integer pixel bounds of a continuous rect: floor min corner, ceil max
    corner, clamped into the extent. Returns (x0, y0, x1, y1) with x1/y1
    exclusive; a rect that leaves no pixels inside the extent is an error."""
    x0 = max(0, int(math.floor(rect.x_min)))
    y0 = max(0, int(math.floor(rect.y_min)))
    x1 = min(int(extent.width), int(math.ceil(rect.x_max)))
    y1 = min(int(extent.height), int(math.ceil(rect.y_max)))
    if x1 <= x0 or y1 <= y0:
        raise EmptyPatch(f"rect {rect} rasterizes to no pixels within extent {extent}")
    return x0, y0, x1, y1


def crop_pixels(image: np.ndarray, rect: Rect) -> PixelPatch:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    extent = ImageExtent(image.shape[1], image.shape[0])
    x0, y0, x1, y1 = pixel_bounds(rect, extent)
    return PixelPatch(image[y0:y1, x0:x1])


def _pool_weights(n_pixels: int, n_cells: int) -> np.ndarray:
    # Row c holds each pixel's overlap with cell c, normalized so rows sum
    # to 1. Interval edges are at multiples of n_pixels / n_cells.
    w = np.zeros((n_cells, n_pixels))
    step = n_pixels / n_cells
    for c in range(n_cells):
        lo = c * step
        hi = (c + 1) * step
        for p in range(int(math.floor(lo)), min(n_pixels, int(math.ceil(hi)))):
            w[c, p] = min(hi, p + 1.0) - max(lo, p)
    return w / step


def _toy_pool(patch: PixelPatch) -> np.ndarray:
    wr = _pool_weights(patch.height, TOY_GRID)
    wc = _pool_weights(patch.width, TOY_GRID)
    x = patch.data.astype(np.float64)
    parts = [wr @ x[:, :, ch] @ wc.T for ch in range(3)]
    return np.concatenate([p.ravel() for p in parts]) / 255.0


def toy_encode(patch: PixelPatch) -> np.ndarray:
    """Encode a pixel patch as a 192-dim unit vector.

    Per channel, area-weighted average pooling onto an 8x8 spatial grid;
    the three 64-cell grids are concatenated channel-major, scaled to [0, 1],
    then L2-normalized. Pooling by cell overlap makes the encoding exactly
    resolution-consistent for integer-divisible sizes. An all-zero patch
    takes the zero-norm guard path of normalize_rows.
    """
    out, _ = normalize_rows(_toy_pool(patch)[None, :])
    return out[0]


def normalize_rows(m: np.ndarray) -> Tuple[np.ndarray, int]:
    """L2-normalize each row. Rows with norm below 1e-12 are replaced by the
    first basis vector e1; the count of such rows is returned alongside and a
    ZeroNormWarning is emitted when it is nonzero."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {m.shape}")
    norms = np.sqrt((m * m).sum(axis=1))
    bad = norms < ZERO_NORM_EPS
    fixed = int(bad.sum())
    out = np.empty_like(m)
    keep = ~bad
    out[keep] = m[keep] / norms[keep, None]
    if fixed:
        e1 = np.zeros(m.shape[1])
        e1[0] = 1.0
        out[bad] = e1
        warnings.warn(
            f"{fixed} zero-norm feature row(s) replaced by e1", ZeroNormWarning, stacklevel=2
        )
    return out, fixed


def encode_patches(image: np.ndarray, view: Rect, patch_set: PatchSet) -> FeatureMap:
    """Toy-encode every patch of a view against the source image pixels.

    Patch rects are view-local; they are offset by the view origin before
    rasterization so the pixels come straight from the original image.
    """
    rows = np.empty((len(patch_set.patches), TOY_DIM))
    for i, p in enumerate(patch_set.patches):
        px = crop_pixels(image, p.translate(view.x_min, view.y_min))
        rows[i] = _toy_pool(px)
    values, fixed = normalize_rows(rows)
    return FeatureMap(
        n=values.shape[0], d=TOY_DIM, values=values, normalized=True, zero_rows_fixed=fixed
    )


def write_embeddings(path: str | Path, values: np.ndarray) -> None:
    """Write an (n, d) float matrix in the FEMB binary layout.

    Layout: magic "FEMB" | u32 version=1 | u32 n | u32 d | n*d little-endian
    float32 values, row-major. The write goes through a temp file and an
    atomic rename.
    """
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimMismatch(f"embeddings must be a nonempty 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("refusing to write non-finite embedding values")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    path = Path(path)
    header = FEMB_MAGIC + struct.pack("<III", FEMB_VERSION, arr.shape[0], arr.shape[1])
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(arr.tobytes())
    tmp.replace(path)


def load_embeddings(path: str | Path, *, renormalize: bool = False) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FEMB_MAGIC:
        raise BadMagic(f"{path}: not a FEMB file")
    if len(raw) < 16:
        raise TruncatedFile(f"{path}: header truncated at {len(raw)} bytes")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != FEMB_VERSION:
        raise BadMagic(f"{path}: unsupported FEMB version {version}")
    if n == 0 or d == 0:
        raise DimMismatch(f"{path}: degenerate dimensions n={n}, d={d}")
    expected = 16 + 4 * n * d
    if len(raw) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw[16:expected], dtype="<f4").reshape(n, d)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: non-finite embedding values")
    fixed = 0
    if renormalize:
        values, fixed = normalize_rows(values.astype(np.float64))
    else:
        values = values.copy()
    return FeatureMap(n=int(n), d=int(d), values=values, normalized=renormalize, zero_rows_fixed=fixed)
