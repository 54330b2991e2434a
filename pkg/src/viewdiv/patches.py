"""Patch extraction over a view: exact grid tiling or sampled sub-crops."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .geometry import Rect

GRID_FACTORS = (2, 3)

SAMPLED_COUNT = 9
SAMPLED_AREA_RANGE = (0.1, 0.6)
SAMPLED_RATIO_RANGE = (3.0 / 4.0, 4.0 / 3.0)
SAMPLED_TARGET_SIDE = 84

_SAMPLE_ATTEMPTS = 10


@dataclass(frozen=True)
class GridStrategy:
    factor: int = 3

    @property
    def patch_count(self) -> int:
        return self.factor * self.factor

    @property
    def name(self) -> str:
        return f"grid{self.factor}"


@dataclass(frozen=True)
class SampledStrategy:
    count: int = SAMPLED_COUNT
    target_side: int = SAMPLED_TARGET_SIDE

    @property
    def patch_count(self) -> int:
        return self.count

    @property
    def name(self) -> str:
        return "sampled"


PatchStrategy = Union[GridStrategy, SampledStrategy]


def strategy_from_name(name: str) -> PatchStrategy:
    if name == "grid2":
        return GridStrategy(2)
    if name == "grid3":
        return GridStrategy(3)
    if name == "sampled":
        return SampledStrategy()
    raise ValueError(f"unknown patch strategy {name!r}; expected grid2, grid3 or sampled")


@dataclass(frozen=True)
class PatchSet:
    """Patches of one view. Patch rects live in view-local coordinates."""

    source_view: Rect
    strategy: PatchStrategy
    patches: Tuple[Rect, ...]
    target_side: Optional[int] = None


def grid_patches(view: Rect, factor: int, *, allow_any_factor: bool = False) -> PatchSet:
    """Tile the view into a factor x factor grid of cells, row-major order.

    Cell edges are computed once and shared between neighbors, so the tiling
    is exact: no gaps, no overlaps, and the end edges land exactly on the
    view border. Factors outside GRID_FACTORS need the explicit override.
    """
    if factor < 1:
        raise ValueError(f"grid factor must be >= 1, got {factor}")
    if factor not in GRID_FACTORS and not allow_any_factor:
        raise ValueError(
            f"grid factor {factor} outside supported set {GRID_FACTORS}; "
            "pass allow_any_factor=True to override"
        )
    w = view.width
    h = view.height
    xs = [w * k / factor for k in range(factor)] + [w]
    ys = [h * k / factor for k in range(factor)] + [h]
    cells = tuple(
        Rect(xs[c], ys[r], xs[c + 1], ys[r + 1])
        for r in range(factor)
        for c in range(factor)
    )
    return PatchSet(source_view=view, strategy=GridStrategy(factor), patches=cells)


def sampled_patches(
    view: Rect,
    rng: np.random.Generator,
    *,
    count: int = SAMPLED_COUNT,
    area_range: Tuple[float, float] = SAMPLED_AREA_RANGE,
    ratio_range: Tuple[float, float] = SAMPLED_RATIO_RANGE,
    target_side: int = SAMPLED_TARGET_SIDE,
) -> PatchSet:
    """Draw ``count`` independent sub-crops of the view.

    Each patch has an area fraction of the view uniform in ``area_range`` and
    a log-uniform aspect ratio in ``ratio_range``, placed uniformly; patches
    may overlap each other. After ten failed placement attempts a patch falls
    back to a centered rect that still honors both bounds.
    """
    f_lo, f_hi = area_range
    if not (0.0 < f_lo <= f_hi <= 1.0):
        raise ValueError(f"area_range must satisfy 0 < lo <= hi <= 1, got {area_range}")
    r_lo, r_hi = ratio_range
    if not (0.0 < r_lo <= r_hi):
        raise ValueError(f"ratio_range must satisfy 0 < lo <= hi, got {ratio_range}")
    w_v = view.width
    h_v = view.height
    area = w_v * h_v
    log_rlo = math.log(r_lo)
    log_rhi = math.log(r_hi)
    out = []
    for _ in range(count):
        rect = None
        for _ in range(_SAMPLE_ATTEMPTS):
            frac = rng.uniform(f_lo, f_hi)
            ratio = math.exp(rng.uniform(log_rlo, log_rhi))
            w = math.sqrt(frac * area * ratio)
            h = math.sqrt(frac * area / ratio)
            if w <= w_v and h <= h_v:
                x0 = rng.uniform(0.0, w_v - w)
                y0 = rng.uniform(0.0, h_v - h)
                rect = Rect(x0, y0, x0 + w, y0 + h)
                break
        if rect is None:
            rect = _centered_patch(w_v, h_v, f_lo, f_hi, r_lo, r_hi)
        out.append(rect)
    return PatchSet(
        source_view=view,
        strategy=SampledStrategy(count=count, target_side=target_side),
        patches=tuple(out),
        target_side=target_side,
    )


def _centered_patch(
    w_v: float, h_v: float, f_lo: float, f_hi: float, r_lo: float, r_hi: float
) -> Rect:
    area = w_v * h_v
    ratio = min(max(w_v / h_v, r_lo), r_hi)
    fit = min(w_v * w_v / (area * ratio), h_v * h_v * ratio / area, 1.0)
    frac = min(f_hi, fit * (1.0 - 1e-12))
    if frac < f_lo:
        raise ValueError(
            f"view of ratio {w_v / h_v:.3g} cannot host a patch with area fraction "
            f">= {f_lo} at ratio bounds ({r_lo}, {r_hi})"
        )
    w = math.sqrt(frac * area * ratio)
    h = math.sqrt(frac * area / ratio)
    x0 = (w_v - w) / 2.0
    y0 = (h_v - h) / 2.0
    return Rect(x0, y0, x0 + w, y0 + h)
