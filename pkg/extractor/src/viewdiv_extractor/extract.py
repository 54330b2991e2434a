"""Run a backbone over exported view pairs and emit FEMB files + manifest.

The input is the pairs JSON produced by ``viewdiv sample``: each pair entry
carries image paths, the two view rects, and view-local patch rects. This
module never re-samples geometry — the pairs file is the single source of
truth for constraints.

Outputs land in one directory: ``<pair>_v1.femb`` / ``<pair>_v2.femb`` per
pair plus ``manifest.json`` mapping every successfully embedded pair_id to
``{view1, view2, strategy}`` with paths relative to the manifest. Pairs that
fail (missing image, unreadable pixels, degenerate crop) are collected into
a per-pair error listing rather than aborting the batch.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .backbones import build_backbone, preprocess
from .femb import write_femb
from .pixels import crop_resized, load_rgb


class PairsFileError(ValueError):
    """The pairs JSON is unreadable or not in the expected shape."""


class NonFiniteFeatures(ArithmeticError):
    """The backbone produced inf/nan features for some patch."""


@dataclasses.dataclass(frozen=True)
class ExtractJob:
    pairs_json: str
    output_dir: str
    image_root: Optional[str] = None  # resolves relative image paths; default: pairs dir
    backbone: str = "resnet50"
    patch_input_side: int = 84
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.patch_input_side < 8:
            raise ValueError(f"patch_input_side must be >= 8, got {self.patch_input_side}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


@dataclasses.dataclass(frozen=True)
class PairFailure:
    pair_id: str
    error: str
    numerical: bool = False  # True for backbone-output failures, not input ones


@dataclasses.dataclass
class ExtractResult:
    manifest_path: Path
    embedded: int
    failures: list[PairFailure]


_PAIR_FIELDS = (
    "pair_id",
    "image_path_1",
    "image_path_2",
    "strategy",
    "v1",
    "v2",
    "patches_1",
    "patches_2",
)


def _load_pairs(path: Path) -> list[dict]:
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise PairsFileError(f"cannot read pairs file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PairsFileError(f"pairs file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("pairs"), list):
        raise PairsFileError("pairs file must be an object with a 'pairs' list")
    for i, pair in enumerate(payload["pairs"]):
        if not isinstance(pair, dict) or any(f not in pair for f in _PAIR_FIELDS):
            raise PairsFileError(f"pair entry {i} is missing required fields")
    return payload["pairs"]


def _resolve_image(recorded: str, job: ExtractJob, pairs_dir: Path) -> Path:
    p = Path(recorded)
    if p.is_absolute():
        return p
    root = Path(job.image_root) if job.image_root else pairs_dir
    return root / p


def _safe_stem(pair_id: str) -> str:
    return "".join(ch if (ch.isalnum() or ch in "-_.") else "_" for ch in pair_id)


def _view_features(
    model: torch.nn.Module, image: np.ndarray, view, patches, job: ExtractJob
) -> np.ndarray:
    crops = np.stack(
        [crop_resized(image, view, patch, job.patch_input_side) for patch in patches]
    )
    rows = []
    with torch.no_grad():
        for start in range(0, len(crops), job.batch_size):
            batch = preprocess(crops[start : start + job.batch_size])
            rows.append(model(batch).numpy().astype(np.float32))
    out = np.concatenate(rows)
    if not np.all(np.isfinite(out)):
        raise NonFiniteFeatures("backbone produced non-finite features")
    return out


def extract(job: ExtractJob) -> ExtractResult:
    """Embed every pair; write FEMB files and the manifest; list failures.

    Deterministic for a fixed job and fixed weights: crops, batching, and
    file naming depend only on the pairs file and job parameters.
    """
    pairs_path = Path(job.pairs_json)
    pairs = _load_pairs(pairs_path)
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, dim = build_backbone(job.backbone)

    manifest: dict[str, dict] = {}
    failures: list[PairFailure] = []
    image_cache: dict[Path, np.ndarray] = {}

    for pair in pairs:
        pair_id = pair["pair_id"]
        try:
            stems = []
            for view_no in (1, 2):
                img_path = _resolve_image(pair[f"image_path_{view_no}"], job, pairs_path.parent)
                if img_path not in image_cache:
                    image_cache[img_path] = load_rgb(img_path)
                feats = _view_features(
                    model,
                    image_cache[img_path],
                    pair[f"v{view_no}"],
                    pair[f"patches_{view_no}"],
                    job,
                )
                assert feats.shape[1] == dim
                name = f"{_safe_stem(pair_id)}_v{view_no}.femb"
                write_femb(out_dir / name, feats)
                stems.append(name)
            manifest[pair_id] = {
                "view1": stems[0],
                "view2": stems[1],
                "strategy": pair["strategy"],
            }
        except (OSError, ValueError, KeyError, ArithmeticError) as exc:
            failures.append(
                PairFailure(
                    pair_id=pair_id,
                    error=f"{type(exc).__name__}: {exc}",
                    numerical=isinstance(exc, ArithmeticError),
                )
            )

    manifest_path = out_dir / "manifest.json"
    tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(manifest_path)
    return ExtractResult(manifest_path=manifest_path, embedded=len(manifest), failures=failures)
