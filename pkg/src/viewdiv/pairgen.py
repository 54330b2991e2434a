"""Constraint-checked positive-pair generation.

Eight named pair policies produce two crops (v1, v2) from an annotated
image (or two images for the cross-image policy) via staged rejection
sampling: v1 is drawn until its own clause holds, then v2 gets a bounded
number of tries against that v1 before v1 is redrawn.  The restart matters
because a large v1 can make the disjointness clause permanently
infeasible.  Every crop draw counts against a shared attempt budget;
exhausting it raises Unsatisfiable so callers can record a skip instead of
looping forever.
"""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .geometry import CropScale, ImageExtent, Rect, iou, sample_rrc

# Overlap below this counts as zero: the disjointness predicates are exact on
# reals, the epsilon only absorbs float noise in the intersection arithmetic.
ZERO_IOU_EPS = 1e-12

# Annotation corpora built from pseudo-masks cap instances at 3 per image;
# ground-truth corpora may exceed it, so ingestion warns instead of failing.
SOFT_BOX_LIMIT = 3

# v2 draws against one accepted v1 before v1 is redrawn.  Matches the crop
# sampler's own internal attempt convention.
_V2_TRIES_PER_V1 = 10


class Unsatisfiable(RuntimeError):
    """Attempt budget exhausted without meeting the pair predicate."""

    def __init__(self, image_id: str, kind: "ConfigKind", attempts: int):
        super().__init__(
            f"no {kind.value} pair found for image {image_id!r} in {attempts} crop draws"
        )
        self.image_id = image_id
        self.kind = kind
        self.attempts = attempts


class MissingPartner(ValueError):
    """Cross-image policy invoked without a second image."""


class NoInstances(ValueError):
    """Instance-anchored policy invoked on an image with no boxes."""


class UnknownImage(KeyError):
    """Pair references an image id absent from the given corpus."""


class ManifestError(ValueError):
    """Corpus manifest is missing, malformed, or self-inconsistent."""


class BoxCountWarning(UserWarning):
    """Image carries more instance boxes than the soft per-image limit."""


class ConfigKind(str, enum.Enum):
    BASELINE = "baseline"
    ZERO_OVERLAP = "zero_overlap"
    INSTANCE_VS_BG = "instance_vs_bg"
    ONLY_BG = "only_bg"
    LOWER_BOUND = "lower_bound"
    SMALLER_CROP = "smaller_crop"
    LARGER_CROP = "larger_crop"
    SMALLER_CROP_ZERO_OVERLAP = "smaller_crop_zero_overlap"


# Policies whose two views must not overlap at all.
_DISJOINT_KINDS = frozenset(
    {
        ConfigKind.ZERO_OVERLAP,
        ConfigKind.INSTANCE_VS_BG,
        ConfigKind.ONLY_BG,
        ConfigKind.SMALLER_CROP_ZERO_OVERLAP,
    }
)

_DEFAULT_SCALE = (0.2, 1.0)
_LARGER_SCALE = (0.4, 1.0)
# Reduced-scale range depends on the corpus: detection-style corpora with
# small average instances get a much lower range than classification-style.
_SMALLER_SCALE = {"coco": (0.08, 0.4), "imagenet": (0.18, 0.9)}

CORPUS_PROFILES = tuple(sorted(_SMALLER_SCALE))


@dataclass(frozen=True)
class PairConfig:
    """One pair policy: its kind, crop scale range, and constraint knobs."""

    kind: ConfigKind
    scale: CropScale
    iou_fg_min: float = 0.8
    iou_bg_max: float = 0.1
    max_attempts: int = 1000

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_bg_max < self.iou_fg_min <= 1.0):
            raise ValueError(
                f"need 0 < iou_bg_max < iou_fg_min <= 1, got "
                f"({self.iou_bg_max}, {self.iou_fg_min})"
            )
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be positive, got {self.max_attempts}")

    @classmethod
    def for_kind(
        cls,
        kind: ConfigKind | str,
        corpus_profile: str = "coco",
        *,
        max_attempts: int = 1000,
    ) -> "PairConfig":
        """Build the named policy with its default scale range."""
        kind = ConfigKind(kind)
        if corpus_profile not in _SMALLER_SCALE:
            raise ValueError(
                f"unknown corpus profile {corpus_profile!r}; expected one of {CORPUS_PROFILES}"
            )
        if kind in (ConfigKind.SMALLER_CROP, ConfigKind.SMALLER_CROP_ZERO_OVERLAP):
            lo, hi = _SMALLER_SCALE[corpus_profile]
        elif kind is ConfigKind.LARGER_CROP:
            lo, hi = _LARGER_SCALE
        else:
            lo, hi = _DEFAULT_SCALE
        return cls(kind=kind, scale=CropScale(lo, hi), max_attempts=max_attempts)


@dataclass(frozen=True)
class AnnotatedImage:
    """An image extent plus its instance boxes; pixels live behind pixel_path."""

    id: str
    extent: ImageExtent
    boxes: tuple[Rect, ...] = ()
    pixel_path: str | None = None


@dataclass(frozen=True)
class ViewPair:
    image_ids: tuple[str, str]
    v1: Rect
    v2: Rect
    kind: ConfigKind
    seed: int


def _v1_accepts(kind: ConfigKind, v1: Rect, boxes: tuple[Rect, ...], cfg: PairConfig) -> bool:
    if kind is ConfigKind.INSTANCE_VS_BG:
        return any(iou(v1, b) > cfg.iou_fg_min for b in boxes)
    if kind is ConfigKind.ONLY_BG:
        return all(iou(v1, b) < cfg.iou_bg_max for b in boxes)
    return True


def _v2_accepts(
    kind: ConfigKind, v1: Rect, v2: Rect, boxes: tuple[Rect, ...], cfg: PairConfig
) -> bool:
    if kind in _DISJOINT_KINDS and iou(v1, v2) > ZERO_IOU_EPS:
        return False
    if kind in (ConfigKind.INSTANCE_VS_BG, ConfigKind.ONLY_BG):
        return all(iou(v2, b) < cfg.iou_bg_max for b in boxes)
    return True


def generate_pair(
    img: AnnotatedImage,
    cfg: PairConfig,
    seed: int,
    partner: AnnotatedImage | None = None,
) -> ViewPair:
    """Draw a view pair satisfying cfg's predicate, or raise Unsatisfiable.

    The result is a pure function of (img, partner, cfg, seed).  The attempt
    budget counts every individual crop draw across both stages and across
    v1 restarts, so a pair that spends 990 draws placing v1 has only 10
    left for v2.
    """
    if cfg.kind is ConfigKind.LOWER_BOUND:
        if partner is None:
            raise MissingPartner("cross-image pairs need a second image")
        if partner.id == img.id:
            raise ValueError("partner must be a different image")
    elif partner is not None:
        raise ValueError(f"{cfg.kind.value} pairs with itself; no partner expected")
    if cfg.kind is ConfigKind.INSTANCE_VS_BG and not img.boxes:
        raise NoInstances(f"image {img.id!r} has no instance boxes")

    rng = np.random.default_rng(seed)
    draws = 0

    def draw(extent: ImageExtent) -> Rect:
        nonlocal draws
        if draws >= cfg.max_attempts:
            raise Unsatisfiable(img.id, cfg.kind, cfg.max_attempts)
        draws += 1
        return sample_rrc(extent, cfg.scale, rng)

    v2_img = partner if cfg.kind is ConfigKind.LOWER_BOUND else img
    while True:
        v1 = draw(img.extent)
        if not _v1_accepts(cfg.kind, v1, img.boxes, cfg):
            continue
        v2 = None
        for _ in range(_V2_TRIES_PER_V1):
            cand = draw(v2_img.extent)
            if _v2_accepts(cfg.kind, v1, cand, img.boxes, cfg):
                v2 = cand
                break
        if v2 is not None:
            break

    return ViewPair(
        image_ids=(img.id, v2_img.id), v1=v1, v2=v2, kind=cfg.kind, seed=seed
    )


def satisfies_config(
    pair: ViewPair,
    images: Mapping[str, AnnotatedImage] | AnnotatedImage,
    cfg: PairConfig,
) -> bool:
    """Re-evaluate the pair predicate from scratch.

    Checks the id topology (cross-image pairs use two distinct images, all
    others a single one) and the per-kind IoU clauses.  Crop-law conformance
    (scale and ratio bounds) is the sampler's postcondition, not part of the
    pair predicate, so it is deliberately not re-checked here.
    """
    if isinstance(images, AnnotatedImage):
        images = {images.id: images}
    id1, id2 = pair.image_ids
    for needed in pair.image_ids:
        if needed not in images:
            raise UnknownImage(needed)
    if cfg.kind is ConfigKind.LOWER_BOUND:
        return id1 != id2
    if id1 != id2:
        return False
    boxes = images[id1].boxes
    return _v1_accepts(cfg.kind, pair.v1, boxes, cfg) and _v2_accepts(
        cfg.kind, pair.v1, pair.v2, boxes, cfg
    )


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ManifestError(msg)


def load_corpus(manifest_path: str | Path) -> tuple[AnnotatedImage, ...]:
    """Parse and validate a corpus manifest.

    Format: {"images": [{"id", "width", "height", "path",
    "boxes": [[x_min, y_min, x_max, y_max], ...]}, ...]}.  Pixel paths are
    resolved relative to the manifest's directory and are not opened here.
    """
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc

    _require(isinstance(raw, dict) and isinstance(raw.get("images"), list),
             "manifest must be an object with an 'images' list")
    base = manifest_path.parent
    images: list[AnnotatedImage] = []
    seen: set[str] = set()
    for pos, entry in enumerate(raw["images"]):
        where = f"images[{pos}]"
        _require(isinstance(entry, dict), f"{where} must be an object")
        img_id = entry.get("id")
        _require(isinstance(img_id, str) and img_id != "", f"{where}.id must be a nonempty string")
        _require(img_id not in seen, f"duplicate image id {img_id!r}")
        seen.add(img_id)
        w, h = entry.get("width"), entry.get("height")
        for name, val in (("width", w), ("height", h)):
            _require(isinstance(val, int) and not isinstance(val, bool) and val > 0,
                     f"{where}.{name} must be a positive integer")
        path = entry.get("path")
        _require(isinstance(path, str) and path != "", f"{where}.path must be a nonempty string")
        raw_boxes = entry.get("boxes", [])
        _require(isinstance(raw_boxes, list), f"{where}.boxes must be a list")
        boxes = []
        for bpos, b in enumerate(raw_boxes):
            bwhere = f"{where}.boxes[{bpos}]"
            _require(isinstance(b, (list, tuple)) and len(b) == 4,
                     f"{bwhere} must be [x_min, y_min, x_max, y_max]")
            _require(all(isinstance(c, (int, float)) and not isinstance(c, bool)
                         and np.isfinite(c) for c in b),
                     f"{bwhere} coordinates must be finite numbers")
            x0, y0, x1, y1 = (float(c) for c in b)
            _require(x1 > x0 and y1 > y0, f"{bwhere} must have positive area")
            _require(0.0 <= x0 and x1 <= w and 0.0 <= y0 and y1 <= h,
                     f"{bwhere} lies outside the {w}x{h} extent")
            boxes.append(Rect(x0, y0, x1, y1))
        if len(boxes) > SOFT_BOX_LIMIT:
            warnings.warn(
                f"image {img_id!r} has {len(boxes)} boxes (soft limit {SOFT_BOX_LIMIT})",
                BoxCountWarning,
                stacklevel=2,
            )
        images.append(
            AnnotatedImage(
                id=img_id,
                extent=ImageExtent(w, h),
                boxes=tuple(boxes),
                pixel_path=str(base / path),
            )
        )
    return tuple(images)


def corpus_index(images: Iterable[AnnotatedImage]) -> dict[str, AnnotatedImage]:
    return {img.id: img for img in images}
