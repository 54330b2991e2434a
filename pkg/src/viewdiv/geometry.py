"""Crop geometry: rectangles, IoU, and the random-resized-crop sampling law."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ExtentTooSmall(ValueError):
    """Raised when no rect of at least 1x1 pixel can satisfy the scale bounds."""


class Rect(NamedTuple):
    """Axis-aligned rectangle in continuous coordinates, x_max > x_min, y_max > y_min."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect_ratio(self) -> float:
        return self.width / self.height

    def translate(self, dx: float, dy: float) -> "Rect":
        return Rect(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


class ImageExtent(NamedTuple):
    width: int
    height: int

    @property
    def area(self) -> float:
        return float(self.width) * float(self.height)


@dataclass(frozen=True)
class CropScale:
    """Area-fraction bounds and aspect-ratio bounds for random resized crops.

    ``s_min``/``s_max`` bound the crop area as a fraction of the source extent;
    ``ratio_min``/``ratio_max`` bound width/height of the sampled crop.
    """

    s_min: float
    s_max: float
    ratio_min: float = 3.0 / 4.0
    ratio_max: float = 4.0 / 3.0

    def __post_init__(self) -> None:
        if not (0.0 < self.s_min <= self.s_max <= 1.0):
            raise ValueError(
                f"scale bounds need 0 < s_min <= s_max <= 1, got ({self.s_min}, {self.s_max})"
            )
        if not (0.0 < self.ratio_min <= self.ratio_max):
            raise ValueError(
                f"ratio bounds need 0 < ratio_min <= ratio_max, got ({self.ratio_min}, {self.ratio_max})"
            )


def iou(a: Rect, b: Rect) -> float:
    """Intersection over union. Disjoint or merely touching rects give exactly 0.0."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    if iw <= 0.0:
        return 0.0
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def contains(outer: Rect, inner: Rect) -> bool:
    return (
        outer.x_min <= inner.x_min
        and outer.y_min <= inner.y_min
        and inner.x_max <= outer.x_max
        and inner.y_max <= outer.y_max
    )


# Placement attempts before the deterministic centered fallback kicks in.
RRC_ATTEMPTS = 10


def sample_rrc(extent: ImageExtent, scale: CropScale, rng: np.random.Generator) -> Rect:
    """Draw one crop rect by the random-resized-crop law.

    The area fraction is uniform in [s_min, s_max] and the aspect ratio is
    log-uniform in [ratio_min, ratio_max]. Up to ``RRC_ATTEMPTS`` draws are
    attempted; if none fits the extent, a deterministic centered crop is
    returned whose ratio is clamped into the ratio bounds as far as the extent
    allows. The area-fraction law holds on every path, including the fallback.

    Coordinates are continuous; rasterization to pixels happens elsewhere.
    """
    w_img = float(extent.width)
    h_img = float(extent.height)
    if w_img < 1.0 or h_img < 1.0 or scale.s_max * w_img * h_img < 1.0:
        raise ExtentTooSmall(
            f"extent {extent.width}x{extent.height} cannot host a 1x1 crop at s_max={scale.s_max}"
        )
    area = w_img * h_img
    log_rmin = math.log(scale.ratio_min)
    log_rmax = math.log(scale.ratio_max)
    for _ in range(RRC_ATTEMPTS):
        frac = rng.uniform(scale.s_min, scale.s_max)
        ratio = math.exp(rng.uniform(log_rmin, log_rmax))
        w = math.sqrt(frac * area * ratio)
        h = math.sqrt(frac * area / ratio)
        if w <= w_img and h <= h_img:
            x0 = rng.uniform(0.0, w_img - w)
            y0 = rng.uniform(0.0, h_img - h)
            return Rect(x0, y0, x0 + w, y0 + h)
    return _center_fallback(w_img, h_img, scale)


def _center_fallback(w_img: float, h_img: float, scale: CropScale) -> Rect:
    area = w_img * h_img
    ratio = min(max(w_img / h_img, scale.ratio_min), scale.ratio_max)
    # Largest area fraction whose ratio-true rect still fits the extent. The
    # 1e-12 shave keeps sqrt rounding from pushing the rect past the border.
    fit = min(w_img * w_img / (area * ratio), h_img * h_img * ratio / area, 1.0)
    frac = min(scale.s_max, fit * (1.0 - 1e-12))
    if frac >= scale.s_min:
        w = math.sqrt(frac * area * ratio)
        h = math.sqrt(frac * area / ratio)
    else:
        # Extent too elongated for the ratio bounds at s_min: the area law
        # wins and the ratio clamp is best-effort.
        frac = scale.s_min
        w = min(w_img, math.sqrt(frac * area * ratio))
        w = max(w, frac * area / h_img)
        h = frac * area / w
    # Division rounding can overshoot the border by an ulp; pin it back.
    w = min(w, w_img)
    h = min(h, h_img)
    x0 = max(0.0, (w_img - w) / 2.0)
    y0 = max(0.0, (h_img - h) / 2.0)
    return Rect(x0, y0, x0 + w, y0 + h)
