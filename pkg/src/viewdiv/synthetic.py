"""Deterministic synthetic annotated corpora for tests and demos.

Three image archetypes cover the pair policies' very different feasibility
profiles:

- "inst": one large instance box flush to the left at ~53% x 90% of the
  extent, leaving a free strip on the right.  Crops can hit the box above
  the 0.8 IoU floor while a background view still fits beside it.
- "bg": one to three small boxes tucked into corners; almost the whole
  extent is background.
- "plain": zero to two small boxes anywhere.

Extents are wide (aspect ~1.8) because disjoint view pairs at scale
(0.2, 1.0) have almost no probability mass on square extents.

Pixels are a per-image base color plus a bilinearly upsampled coarse random
field, with boxes painted in solid random colors.  The base color separates
images from each other (cross-image pairs score low), the smooth field
separates distant crops within an image (disjoint pairs score between
cross-image and overlapping ones).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Rect

SIZES = ((448, 240), (480, 256), (416, 224))
FIELD_CELLS = (7, 4)  # coarse field resolution (x, y)


def _paint(rng: np.random.Generator, width: int, height: int, boxes, amp: int) -> np.ndarray:
    base = rng.integers(40, 216, size=3).astype(np.float64)
    cells_x, cells_y = FIELD_CELLS
    coarse = base + rng.uniform(-amp, amp, size=(cells_y, cells_x, 3))
    coarse = np.clip(coarse, 0, 255).astype(np.uint8)
    field = Image.fromarray(coarse, mode="RGB").resize((width, height), Image.BILINEAR)
    arr = np.asarray(field).copy()
    for box in boxes:
        color = rng.integers(0, 256, size=3).astype(np.uint8)
        arr[int(box.y_min): int(box.y_max), int(box.x_min): int(box.x_max)] = color
    return arr


def _instance_boxes(rng: np.random.Generator, w: int, h: int) -> list[Rect]:
    bw = int(0.53 * w)
    bh = int(0.90 * h)
    x0 = int(rng.integers(8, 17))
    y0 = (h - bh) // 2
    return [Rect(float(x0), float(y0), float(x0 + bw), float(y0 + bh))]


def _corner_boxes(rng: np.random.Generator, w: int, h: int, count: int) -> list[Rect]:
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    rng.shuffle(corners)
    boxes = []
    for cx, cy in corners[:count]:
        side = int(rng.integers(40, 65))
        jx = int(rng.integers(0, 9))
        jy = int(rng.integers(0, 9))
        x0 = jx if cx == 0 else w - side - jx
        y0 = jy if cy == 0 else h - side - jy
        boxes.append(Rect(float(x0), float(y0), float(x0 + side), float(y0 + side)))
    return boxes


def make_synthetic_corpus(
    out_dir: str | Path,
    n_images: int = 24,
    seed: int = 0,
    instance_frac: float = 0.4,
    background_frac: float = 0.35,
    field_amp: int = 40,
) -> Path:
    """Write PNGs plus a manifest under out_dir; returns the manifest path.

    The corpus is a pure function of the arguments.  Archetypes are assigned
    by index (instances first, then background, then plain) so the mix is
    exact rather than sampled.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "imgs"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    n_inst = round(n_images * instance_frac)
    n_bg = round(n_images * background_frac)
    entries = []
    for i in range(n_images):
        w, h = SIZES[int(rng.integers(0, len(SIZES)))]
        if i < n_inst:
            arche = "inst"
            boxes = _instance_boxes(rng, w, h)
        elif i < n_inst + n_bg:
            arche = "bg"
            boxes = _corner_boxes(rng, w, h, int(rng.integers(1, 4)))
        else:
            arche = "plain"
            boxes = _corner_boxes(rng, w, h, int(rng.integers(0, 3)))
        img_id = f"{arche}{i:04d}"
        arr = _paint(rng, w, h, boxes, field_amp)
        rel = f"imgs/{img_id}.png"
        Image.fromarray(arr, mode="RGB").save(img_dir / f"{img_id}.png")
        entries.append(
            {
                "id": img_id,
                "width": w,
                "height": h,
                "path": rel,
                "boxes": [[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes],
            }
        )
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"images": entries}, indent=2, sort_keys=True))
    return manifest
