"""Patch geometry to pixels.

Patch rects in a pairs file are view-local: the image-space rect is the
patch translated by the view's min corner. Pixel bounds then floor the min
corner and ceil the max corner, clamped into [0, W] x [0, H] with exclusive
x1/y1 — the same convention the scorer uses, pinned by a shared golden
fixture in both test suites.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image


class EmptyCrop(ValueError):
    """A patch whose pixel window collapsed to zero area after clamping."""


def pixel_window(
    extent: Sequence[int], view: Sequence[float], patch: Sequence[float]
) -> tuple[int, int, int, int]:
    """Integer pixel bounds of a view-local patch rect inside the image."""
    w, h = int(extent[0]), int(extent[1])
    x_min = patch[0] + view[0]
    y_min = patch[1] + view[1]
    x_max = patch[2] + view[0]
    y_max = patch[3] + view[1]
    x0 = max(0, int(math.floor(x_min)))
    y0 = max(0, int(math.floor(y_min)))
    x1 = min(w, int(math.ceil(x_max)))
    y1 = min(h, int(math.ceil(y_max)))
    if x1 <= x0 or y1 <= y0:
        raise EmptyCrop(f"patch {tuple(patch)} of view {tuple(view)} clamps to nothing")
    return x0, y0, x1, y1


def load_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def crop_resized(image: np.ndarray, view, patch, side: int) -> np.ndarray:
    """Crop one patch and bilinearly resize it to (side, side) uint8 RGB."""
    x0, y0, x1, y1 = pixel_window((image.shape[1], image.shape[0]), view, patch)
    window = Image.fromarray(image[y0:y1, x0:x1])
    return np.asarray(window.resize((side, side), Image.BILINEAR))
