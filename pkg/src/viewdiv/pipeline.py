"""Corpus-level orchestration: pairs -> patches -> features -> scores -> reports.

Determinism contract: report.json, pairs.csv, plotdata.json and the sample
output are pure functions of the run spec (worker count explicitly
excluded), so repeated runs are byte-identical.  Wall-clock numbers
therefore live in a separate timings.json sidecar and nowhere else.

Every random decision draws from its own generator seeded by
derive_seed(...), which hashes the decision's identity (run seed, purpose
tag, image id, pair index) with SHA-256 and keeps the first 8 bytes.
Parallel workers write into pre-assigned slots, so scheduling order cannot
surface in any output.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .features import FeatureMap, encode_patches, load_embeddings
from .geometry import Rect
from .pairgen import (
    AnnotatedImage,
    ConfigKind,
    ManifestError,
    NoInstances,
    PairConfig,
    Unsatisfiable,
    ViewPair,
    generate_pair,
    load_corpus,
)
from .patches import GridStrategy, PatchSet, PatchStrategy, grid_patches, sampled_patches, strategy_from_name
from .transport import SinkhornParams, similarity

HISTOGRAM_BINS = 32
# Plot emission scales scores for readability; stored S values never carry it.
DISPLAY_FACTOR = 10

CSV_HEADER = (
    "pair_id,config,image_id_1,image_id_2,"
    "v1_x_min,v1_y_min,v1_x_max,v1_y_max,"
    "v2_x_min,v2_y_min,v2_x_max,v2_y_max,strategy,S"
)


class EncoderMismatch(ValueError):
    """External embedding manifest does not cover the requested pairs."""


class MissingAnchor(KeyError):
    """Range rule needs both anchor configurations in the report."""


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from the string forms of the parts.

    SHA-256 over the parts joined with a 0x1f separator; the first 8 digest
    bytes, little-endian.  Documented so external tools can reproduce any
    single pair in isolation.
    """
    blob = b"\x1f".join(str(p).encode("utf-8") for p in parts)
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


_ALL_KINDS = tuple(k.value for k in ConfigKind)


def _config_from_entry(entry, corpus_profile: str) -> PairConfig:
    if isinstance(entry, str):
        return PairConfig.for_kind(entry, corpus_profile)
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ValueError(f"config entry must be a kind name or an object with 'kind': {entry!r}")
    base = PairConfig.for_kind(entry["kind"], corpus_profile)
    unknown = set(entry) - {"kind", "scale", "iou_fg_min", "iou_bg_max", "max_attempts"}
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    scale = base.scale
    if "scale" in entry:
        lo, hi = entry["scale"]
        scale = dataclasses.replace(base.scale, s_min=float(lo), s_max=float(hi))
    return PairConfig(
        kind=base.kind,
        scale=scale,
        iou_fg_min=float(entry.get("iou_fg_min", base.iou_fg_min)),
        iou_bg_max=float(entry.get("iou_bg_max", base.iou_bg_max)),
        max_attempts=int(entry.get("max_attempts", base.max_attempts)),
    )


@dataclass(frozen=True)
class RunSpec:
    """Everything a scoring run depends on.  workers never affects output."""

    corpus_manifest: str
    configs: tuple[PairConfig, ...]
    strategy: PatchStrategy = GridStrategy(3)
    encoder: str = "toy"
    embeddings_manifest: Optional[str] = None
    corpus_profile: str = "coco"
    sinkhorn: SinkhornParams = SinkhornParams()
    seed: int = 0
    data_fraction: float = 1.0
    pairs_per_image: int = 1
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.configs:
            raise ValueError("configs must be nonempty")
        kinds = [c.kind for c in self.configs]
        if len(set(kinds)) != len(kinds):
            raise ValueError("duplicate config kinds in one run")
        if not (0.0 < self.data_fraction <= 1.0):
            raise ValueError(f"data_fraction must be in (0, 1], got {self.data_fraction}")
        if self.pairs_per_image < 1:
            raise ValueError("pairs_per_image must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.encoder not in ("toy", "external"):
            raise ValueError(f"encoder must be 'toy' or 'external', got {self.encoder!r}")
        if self.encoder == "external" and not self.embeddings_manifest:
            raise ValueError("external encoder requires embeddings_manifest")

    @classmethod
    def from_file(cls, path: str | Path, *, workers: Optional[int] = None) -> "RunSpec":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ValueError(f"cannot read run spec {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValueError("run spec must be a JSON object")
        known = {
            "corpus_manifest", "configs", "strategy", "encoder", "embeddings_manifest",
            "corpus_profile", "sinkhorn", "seed", "data_fraction", "pairs_per_image", "workers",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown run spec keys {sorted(unknown)}")
        if "corpus_manifest" not in raw:
            raise ValueError("run spec needs corpus_manifest")
        base = path.parent
        profile = raw.get("corpus_profile", "coco")
        configs = tuple(
            _config_from_entry(e, profile) for e in raw.get("configs", list(_ALL_KINDS))
        )
        emb = raw.get("embeddings_manifest")
        sink = raw.get("sinkhorn", {})
        if not isinstance(sink, dict):
            raise ValueError("sinkhorn must be an object")
        return cls(
            corpus_manifest=str(base / raw["corpus_manifest"]),
            configs=configs,
            strategy=strategy_from_name(raw.get("strategy", "grid3")),
            encoder=raw.get("encoder", "toy"),
            embeddings_manifest=str(base / emb) if emb else None,
            corpus_profile=profile,
            sinkhorn=SinkhornParams(**sink),
            seed=int(raw.get("seed", 0)),
            data_fraction=float(raw.get("data_fraction", 1.0)),
            pairs_per_image=int(raw.get("pairs_per_image", 1)),
            workers=int(workers if workers is not None else raw.get("workers", 1)),
        )

    def run_metadata(self, corpus_size: int, subset_size: int) -> dict:
        return {
            "corpus_manifest": str(self.corpus_manifest),
            "corpus_size": corpus_size,
            "subset_size": subset_size,
            "strategy": self.strategy.name,
            "encoder": self.encoder,
            "embeddings_manifest": (
                str(self.embeddings_manifest) if self.embeddings_manifest else None
            ),
            "corpus_profile": self.corpus_profile,
            "sinkhorn": {
                "lam": self.sinkhorn.lam,
                "iterations": self.sinkhorn.iterations,
                "epsilon": self.sinkhorn.epsilon,
                "log_domain": self.sinkhorn.log_domain,
            },
            "seed": self.seed,
            "data_fraction": self.data_fraction,
            "pairs_per_image": self.pairs_per_image,
        }


@dataclass(frozen=True)
class _Task:
    slot: int
    config: PairConfig
    image: AnnotatedImage
    partner: Optional[AnnotatedImage]
    pair_index: int
    pair_id: str
    pair_seed: int


@dataclass
class _Outcome:
    task: _Task
    pair: Optional[ViewPair] = None
    patches1: Optional[PatchSet] = None
    patches2: Optional[PatchSet] = None
    s: Optional[float] = None
    skip_reason: Optional[str] = None
    elapsed_ms: float = 0.0


@dataclass
class SimilarityReport:
    per_config: dict
    rows: list
    run: dict
    timings: dict


def _select_subset(images, spec: RunSpec):
    rng = np.random.default_rng(derive_seed(spec.seed, "subset"))
    order = rng.permutation(len(images))
    # Round-half-up keeps at least one image; the shuffle ignores the
    # fraction, so smaller subsets are prefixes of larger ones.
    m = max(1, int(math.floor(spec.data_fraction * len(images) + 0.5)))
    return [images[i] for i in order[:m]]


def _build_tasks(subset, spec: RunSpec) -> list[_Task]:
    tasks: list[_Task] = []
    for cfg in spec.configs:
        for img in subset:
            for k in range(spec.pairs_per_image):
                partner = None
                if cfg.kind is ConfigKind.LOWER_BOUND:
                    if len(subset) < 2:
                        raise ManifestError(
                            "cross-image pairs need at least 2 images in the active subset"
                        )
                    prng = np.random.default_rng(
                        derive_seed(spec.seed, "partner", img.id, k)
                    )
                    others = [o for o in subset if o.id != img.id]
                    partner = others[int(prng.integers(0, len(others)))]
                pair_id = f"{cfg.kind.value}:{img.id}:{k}"
                tasks.append(
                    _Task(
                        slot=len(tasks),
                        config=cfg,
                        image=img,
                        partner=partner,
                        pair_index=k,
                        pair_id=pair_id,
                        pair_seed=derive_seed(spec.seed, cfg.kind.value, img.id, k),
                    )
                )
    return tasks


def _load_pixels(img: AnnotatedImage) -> np.ndarray:
    try:
        with Image.open(img.pixel_path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise ManifestError(f"cannot read image {img.pixel_path}: {exc}") from exc


def _patches_for(view: Rect, spec: RunSpec, pair_id: str, view_no: int) -> PatchSet:
    if isinstance(spec.strategy, GridStrategy):
        return grid_patches(view, spec.strategy.factor)
    rng = np.random.default_rng(derive_seed(spec.seed, "patches", pair_id, view_no))
    return sampled_patches(
        view,
        rng,
        count=spec.strategy.count,
        target_side=spec.strategy.target_side,
    )


def _load_embedding_manifest(spec: RunSpec) -> dict:
    path = Path(spec.embeddings_manifest)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read embeddings manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"embeddings manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError("embeddings manifest must map pair_id -> entry")
    base = path.parent
    out = {}
    for pair_id, entry in raw.items():
        if not (
            isinstance(entry, dict)
            and isinstance(entry.get("view1"), str)
            and isinstance(entry.get("view2"), str)
            and isinstance(entry.get("strategy"), str)
        ):
            raise ManifestError(
                f"embeddings entry for {pair_id!r} needs view1/view2/strategy strings"
            )
        out[pair_id] = {
            "view1": str(base / entry["view1"]),
            "view2": str(base / entry["view2"]),
            "strategy": entry["strategy"],
        }
    return out


def _external_features(task: _Task, spec: RunSpec, emb: dict) -> tuple[FeatureMap, FeatureMap]:
    entry = emb.get(task.pair_id)
    if entry is None:
        raise EncoderMismatch(f"embeddings manifest has no entry for {task.pair_id!r}")
    if entry["strategy"] != spec.strategy.name:
        raise EncoderMismatch(
            f"{task.pair_id!r}: embeddings built with strategy {entry['strategy']!r}, "
            f"run wants {spec.strategy.name!r}"
        )
    f1 = load_embeddings(entry["view1"])
    f2 = load_embeddings(entry["view2"])
    want = spec.strategy.patch_count
    if f1.n != want or f2.n != want:
        raise EncoderMismatch(
            f"{task.pair_id!r}: expected {want} rows per view, got {f1.n} and {f2.n}"
        )
    return f1, f2


def _execute(spec: RunSpec, *, encode: bool):
    """Shared generation/scoring engine behind run() and sample_pairs()."""
    t0 = time.perf_counter()
    images = load_corpus(spec.corpus_manifest)
    if not images:
        raise ManifestError("corpus has no images")
    subset = _select_subset(images, spec)
    tasks = _build_tasks(subset, spec)

    pixels: dict[str, np.ndarray] = {}
    emb: dict = {}
    if encode:
        if spec.encoder == "toy":
            for img in subset:
                pixels[img.id] = _load_pixels(img)
        else:
            emb = _load_embedding_manifest(spec)
    ingest_ms = (time.perf_counter() - t0) * 1000.0

    def work(task: _Task) -> _Outcome:
        started = time.perf_counter()
        out = _Outcome(task=task)
        try:
            pair = generate_pair(
                task.image, task.config, task.pair_seed, partner=task.partner
            )
        except Unsatisfiable:
            out.skip_reason = "unsatisfiable"
        except NoInstances:
            out.skip_reason = "no_instances"
        else:
            out.pair = pair
            out.patches1 = _patches_for(pair.v1, spec, task.pair_id, 1)
            out.patches2 = _patches_for(pair.v2, spec, task.pair_id, 2)
            if encode:
                if spec.encoder == "toy":
                    f1 = encode_patches(pixels[pair.image_ids[0]], pair.v1, out.patches1)
                    f2 = encode_patches(pixels[pair.image_ids[1]], pair.v2, out.patches2)
                else:
                    f1, f2 = _external_features(task, spec, emb)
                out.s = similarity(f1, f2, spec.sinkhorn)
        out.elapsed_ms = (time.perf_counter() - started) * 1000.0
        return out

    t1 = time.perf_counter()
    outcomes: list[Optional[_Outcome]] = [None] * len(tasks)
    if spec.workers == 1:
        for task in tasks:
            outcomes[task.slot] = work(task)
    else:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            for slot, outcome in enumerate(pool.map(work, tasks)):
                outcomes[slot] = outcome
    scoring_ms = (time.perf_counter() - t1) * 1000.0

    meta = spec.run_metadata(len(images), len(subset))
    timings = {"ingest_ms": ingest_ms, "scoring_ms": scoring_ms}
    return outcomes, meta, timings


def _aggregate(spec: RunSpec, outcomes, meta, timings) -> SimilarityReport:
    t0 = time.perf_counter()
    per_config: dict[str, dict] = {}
    rows = []
    per_config_ms: dict[str, float] = {}
    for cfg in spec.configs:
        kind = cfg.kind.value
        mine = [o for o in outcomes if o.task.config is cfg]
        per_config_ms[kind] = sum(o.elapsed_ms for o in mine)
        scores = []
        skips = []
        hist = [0] * HISTOGRAM_BINS
        clamped = 0
        for o in mine:
            if o.skip_reason is not None:
                skips.append(
                    {
                        "image_id": o.task.image.id,
                        "pair_index": o.task.pair_index,
                        "reason": o.skip_reason,
                    }
                )
                continue
            s = o.s
            assert s is not None and -1.0 <= s <= 1.0 + 1e-12
            scores.append(s)
            if s < 0.0:
                clamped += 1
                hist[0] += 1
            else:
                hist[min(HISTOGRAM_BINS - 1, int(s * HISTOGRAM_BINS))] += 1
            p = o.pair
            rows.append(
                (
                    o.task.pair_id,
                    kind,
                    p.image_ids[0],
                    p.image_ids[1],
                    p.v1,
                    p.v2,
                    spec.strategy.name,
                    s,
                )
            )
        arr = np.asarray(scores)
        per_config[kind] = {
            "params": {
                "scale": [cfg.scale.s_min, cfg.scale.s_max],
                "iou_fg_min": cfg.iou_fg_min,
                "iou_bg_max": cfg.iou_bg_max,
                "max_attempts": cfg.max_attempts,
            },
            "requested": len(mine),
            "count": len(scores),
            "skipped": len(skips),
            "skips": skips,
            "mean": float(arr.mean()) if scores else None,
            "std": float(arr.std()) if scores else None,
            "min": float(arr.min()) if scores else None,
            "max": float(arr.max()) if scores else None,
            "histogram": hist,
            "clamped_negative": clamped,
        }
    timings = dict(timings)
    timings["aggregate_ms"] = (time.perf_counter() - t0) * 1000.0
    timings["per_config_ms"] = per_config_ms
    timings["total_ms"] = (
        timings["ingest_ms"] + timings["scoring_ms"] + timings["aggregate_ms"]
    )
    return SimilarityReport(per_config=per_config, rows=rows, run=meta, timings=timings)


def run(spec: RunSpec, out_dir: str | Path | None = None) -> SimilarityReport:
    """Score every (config, subset image, pair index) cell and aggregate.

    When out_dir is given, writes report.json, pairs.csv, plotdata.json and
    timings.json there.
    """
    outcomes, meta, timings = _execute(spec, encode=True)
    report = _aggregate(spec, outcomes, meta, timings)
    if out_dir is not None:
        write_outputs(report, out_dir)
    return report


def sample_pairs(spec: RunSpec) -> dict:
    """Geometry-only run: emit pairs and their patch rects for inspection
    or for an external feature extractor (no pixels touched)."""
    outcomes, meta, _ = _execute(spec, encode=False)
    index = {img.id: img for img in load_corpus(spec.corpus_manifest)}
    pairs = []
    skipped = []
    for o in outcomes:
        if o.skip_reason is not None:
            skipped.append(
                {
                    "pair_id": o.task.pair_id,
                    "config": o.task.config.kind.value,
                    "image_id": o.task.image.id,
                    "pair_index": o.task.pair_index,
                    "reason": o.skip_reason,
                }
            )
            continue
        p = o.pair
        pairs.append(
            {
                "pair_id": o.task.pair_id,
                "config": o.task.config.kind.value,
                "image_id_1": p.image_ids[0],
                "image_id_2": p.image_ids[1],
                "image_path_1": index[p.image_ids[0]].pixel_path,
                "image_path_2": index[p.image_ids[1]].pixel_path,
                "strategy": spec.strategy.name,
                "target_side": getattr(spec.strategy, "target_side", None),
                "v1": list(p.v1),
                "v2": list(p.v2),
                "patches_1": [list(r) for r in o.patches1.patches],
                "patches_2": [list(r) for r in o.patches2.patches],
            }
        )
    return {"pairs": pairs, "skipped": skipped, "run": meta}


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def csv_text(report: SimilarityReport) -> str:
    lines = [CSV_HEADER]
    for pair_id, kind, id1, id2, v1, v2, strategy, s in report.rows:
        coords = [repr(float(c)) for c in (*v1, *v2)]
        lines.append(
            ",".join([pair_id, kind, id1, id2, *coords, strategy, repr(float(s))])
        )
    return "\n".join(lines) + "\n"


def plotdata(report: SimilarityReport) -> dict:
    series = {}
    for kind, stats in report.per_config.items():
        series[kind] = {
            "mean_x10": None if stats["mean"] is None else stats["mean"] * DISPLAY_FACTOR,
            "std_x10": None if stats["std"] is None else stats["std"] * DISPLAY_FACTOR,
        }
    return {"display_factor": DISPLAY_FACTOR, "per_config": series}


def write_outputs(report: SimilarityReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json({"per_config": report.per_config, "run": report.run}, out / "report.json")
    (out / "pairs.csv").write_text(csv_text(report))
    _dump_json(plotdata(report), out / "plotdata.json")
    # Wall clock is the one thing allowed to differ between identical runs.
    _dump_json(report.timings, out / "timings.json")


def fraction_study(spec: RunSpec, fractions) -> dict:
    """Re-run the corpus at nested subset fractions and compare means.

    Stability per config is max_f |mean(f) - mean(1.0)|; the full-corpus run
    is the reference, so 1.0 must be among the fractions.
    """
    fs = sorted(set(float(f) for f in fractions))
    if not fs:
        raise ValueError("fractions must be nonempty")
    for f in fs:
        if not (0.0 < f <= 1.0):
            raise ValueError(f"fractions must lie in (0, 1], got {f}")
    if fs[-1] != 1.0:
        raise ValueError("fractions must include 1.0 (the stability reference)")

    reports = {}
    wall = {}
    for f in fs:
        rspec = dataclasses.replace(spec, data_fraction=f)
        rep = run(rspec)
        reports[f] = rep
        wall[repr(f)] = rep.timings["total_ms"]

    kinds = [c.kind.value for c in spec.configs]
    means = {
        kind: {repr(f): reports[f].per_config[kind]["mean"] for f in fs} for kind in kinds
    }
    stability = {}
    for kind in kinds:
        ref = reports[1.0].per_config[kind]["mean"]
        gaps = [
            abs(reports[f].per_config[kind]["mean"] - ref)
            for f in fs
            if reports[f].per_config[kind]["mean"] is not None and ref is not None
        ]
        stability[kind] = max(gaps) if gaps and ref is not None else None
    known = [v for v in stability.values() if v is not None]
    return {
        "fractions": fs,
        "per_config_mean": means,
        "subset_sizes": {repr(f): reports[f].run["subset_size"] for f in fs},
        "stability": stability,
        "stability_max": max(known) if known else None,
        "wall_clock_ms": wall,
    }


@dataclass(frozen=True)
class RangeRule:
    upper: float
    lower: float
    verdicts: dict


def range_rule(report: SimilarityReport | dict) -> RangeRule:
    """Classify each config's mean S against the useful-diversity band.

    The band is anchored by the unconstrained-pair mean (upper) and the
    smaller-crop-disjoint mean (lower); membership uses the closed interval
    between the two anchors, so both anchors classify as inside.
    """
    per_config = report.per_config if isinstance(report, SimilarityReport) else report["per_config"]
    means = {k: v["mean"] for k, v in per_config.items()}

    def anchor(kind: ConfigKind) -> float:
        val = means.get(kind.value)
        if val is None:
            raise MissingAnchor(f"report lacks a scored {kind.value} config")
        return val

    upper = anchor(ConfigKind.BASELINE)
    lower = anchor(ConfigKind.SMALLER_CROP_ZERO_OVERLAP)
    lo, hi = min(lower, upper), max(lower, upper)
    verdicts = {}
    for kind, mean in means.items():
        if mean is None:
            verdicts[kind] = None
        elif mean > hi:
            verdicts[kind] = "above"
        elif mean < lo:
            verdicts[kind] = "below"
        else:
            verdicts[kind] = "inside"
    return RangeRule(upper=upper, lower=lower, verdicts=verdicts)
