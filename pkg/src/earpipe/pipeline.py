"""Pipeline orchestration: stage ordering, per-stage caching, backends wiring.

Cache layout: one directory per stage under the cache root, named
``<stage>-<fingerprint>`` where the fingerprint hashes every config field that
stage depends on, including its upstream stages' fingerprints. Artifact
filenames embed a content hash of the stage's direct input, so editing any
input image invalidates exactly its downstream artifacts. A warm rerun finds
every artifact in place and performs zero per-image stage executions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mocks
from .alignment import PAD_FILLS, align_image
from .detection import DetectorConfig, detect_accessories, load_detection_dump, save_detection_dump
from .embedding import EmbeddingCache, embed_manifest, split_by_side
from .errors import ComparisonError, ConfigError, IngestionError
from .masking import build_accessory_mask, dilate_mask
from .reporting import emit_roc_plot, make_cell, render_comparison_table
from .restoration import restore
from .types import (
    DatasetManifest, ImageRecord, load_image, load_manifest, load_mask,
    save_image, save_mask, validate_manifest,
)
from .verification import (
    aggregate_trials, load_results, pair_counts, save_results, score_all_pairs,
    subsample_impostors,
)

logger = logging.getLogger(__name__)

CANONICAL_STAGES = ("ingest", "side_split", "align", "detect", "mask",
                    "inpaint", "embed", "evaluate")
CONDITIONS = ("baseline", "inpainted")
_INPAINT_ONLY_STAGES = {"detect", "mask", "inpaint"}

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
_SIDECAR_MARKERS = (".earmask", ".accmask", ".mask", ".inpainted", ".aligned")

_SUPERVISED_DETECTORS = {
    "none": lambda cfg: mocks.NullDetector(),
    "bright_spot": lambda cfg: mocks.BrightSpotDetector(),
}
_ZERO_SHOT_DETECTORS = {
    "none": lambda cfg: mocks.NullDetector(),
    "bright_spot": lambda cfg: mocks.BrightSpotDetector(source="zero_shot"),
}
_SEGMENTERS = {
    "inscribed_ellipse": lambda cfg: mocks.InscribedEllipseSegmenter(),
}
_INPAINTERS = {
    "harmonic": lambda cfg: mocks.HarmonicInpainter(),
}
_EMBEDDERS = {
    "projection": lambda cfg, seed: mocks.ProjectionEmbedder(seed=seed),
}
_SIDE_CLASSIFIERS = {
    "half_brightness": lambda cfg: mocks.HalfBrightnessSideClassifier(),
}


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple[str, ...] = CANONICAL_STAGES
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    binarize_threshold: float = 0.5
    min_quality: float = 0.5
    dilation_radius: int = 0
    k: int = 5
    pad_fill: str = "black"
    supervised_detector: str = "bright_spot"
    zero_shot_detector: str = "none"
    segmenter: str = "inscribed_ellipse"
    inpainter: str = "harmonic"
    embedder: str = "projection"
    side_classifier: str = "half_brightness"
    seed: int = 0
    trials: int = 5
    cache_dir: str = "cache"
    workers: int | None = None
    max_impostor_pairs: int | None = None
    subsample_seed: int = 0

    def __post_init__(self):
        order = [s for s in CANONICAL_STAGES if s in self.stages]
        if list(self.stages) != order or len(set(self.stages)) != len(self.stages):
            raise ConfigError(
                f"stages must be a subsequence of {list(CANONICAL_STAGES)}, got {list(self.stages)}"
            )
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.dilation_radius < 0:
            raise ConfigError(f"dilation_radius must be >= 0, got {self.dilation_radius}")
        if self.pad_fill not in PAD_FILLS:
            raise ConfigError(f"pad_fill must be one of {PAD_FILLS}, got {self.pad_fill!r}")
        for name, known in (
            ("supervised_detector", _SUPERVISED_DETECTORS),
            ("zero_shot_detector", _ZERO_SHOT_DETECTORS),
            ("segmenter", _SEGMENTERS),
            ("inpainter", _INPAINTERS),
            ("embedder", _EMBEDDERS),
            ("side_classifier", _SIDE_CLASSIFIERS),
        ):
            if getattr(self, name) not in known:
                raise ConfigError(
                    f"unknown {name} {getattr(self, name)!r}; known: {sorted(known)}"
                )
        object.__setattr__(self, "stages", tuple(self.stages))

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"unreadable config {path}: {e}") from e
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "detector" in doc:
            doc["detector"] = DetectorConfig(**doc["detector"])
        if "stages" in doc:
            doc["stages"] = tuple(doc["stages"])
        return cls(**doc)


# ---------------------------------------------------------------------------
# fingerprints and cache paths

def _fingerprint(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _hash_bytes(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()[:8]


def stage_fingerprints(cfg: PipelineConfig) -> dict[str, str]:
    """Fingerprint per stage; each folds in its upstream fingerprints."""
    fp = {}
    fp["align"] = _fingerprint({"k": cfg.k, "pad_fill": cfg.pad_fill})
    fp["detect"] = _fingerprint({
        "supervised": cfg.supervised_detector,
        "zero_shot": cfg.zero_shot_detector,
        "box_threshold": cfg.detector.box_threshold,
        "text_threshold": cfg.detector.text_threshold,
        "max_area_ratio": cfg.detector.max_area_ratio,
        "prompt_terms": list(cfg.detector.prompt_terms),
        "upstream": fp["align"],
    })
    fp["mask"] = _fingerprint({
        "segmenter": cfg.segmenter,
        "binarize_threshold": cfg.binarize_threshold,
        "min_quality": cfg.min_quality,
        "dilation_radius": cfg.dilation_radius,
        "upstream": fp["detect"],
    })
    fp["inpaint"] = _fingerprint({"inpainter": cfg.inpainter, "upstream": fp["mask"]})
    fp["embed"] = _fingerprint({"embedder": cfg.embedder, "seed": cfg.seed})
    return fp


class PipelineStats:
    """computed/cached counters per stage."""

    def __init__(self):
        self.counts: dict[str, dict[str, int]] = {}

    def add(self, stage: str, *, computed: int = 0, cached: int = 0) -> None:
        entry = self.counts.setdefault(stage, {"computed": 0, "cached": 0})
        entry["computed"] += computed
        entry["cached"] += cached

    def computed_total(self) -> int:
        return sum(e["computed"] for e in self.counts.values())


def _parallel(fn, items, workers: int | None):
    n = workers or os.cpu_count() or 1
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# ingest

def ingest_dataset(root: str | Path, layout: str = "subject_folders",
                   name: str | None = None) -> DatasetManifest:
    """Build a manifest from a dataset directory.

    subject_folders: one subdirectory per subject, images inside.
    flat_with_index: flat image directory plus index.csv with header
    filename,subject_id,side.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root not found: {root}")
    name = name or root.name
    records: list[ImageRecord] = []

    if layout == "subject_folders":
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            images = sorted(
                p for p in sub.iterdir()
                if p.suffix.lower() in _IMAGE_SUFFIXES and not _is_sidecar(p)
            )
            if not images:
                logger.warning("ingest: skipping empty subject folder %s", sub.name)
                continue
            for img in images:
                records.append(ImageRecord(
                    subject_id=sub.name, side="unknown", stage="raw",
                    path=f"{sub.name}/{img.name}", source_dataset=name,
                ))
    elif layout == "flat_with_index":
        import csv as _csv
        index = root / "index.csv"
        if not index.is_file():
            raise IngestionError(f"flat_with_index layout requires {index}")
        with open(index, newline="") as f:
            rows = sorted(_csv.DictReader(f), key=lambda r: r["filename"])
        for row in rows:
            records.append(ImageRecord(
                subject_id=row["subject_id"], side=row.get("side", "unknown") or "unknown",
                stage="raw", path=row["filename"], source_dataset=name,
            ))
    else:
        raise IngestionError(f"unknown layout {layout!r}")

    if not records:
        raise IngestionError(f"no images found under {root}")
    return DatasetManifest(name=name, records=tuple(records), root=root)


def _is_sidecar(path: Path) -> bool:
    stem = path.name[:-len(path.suffix)]
    return any(stem.endswith(marker) for marker in _SIDECAR_MARKERS)


# ---------------------------------------------------------------------------
# stage runners

def _ear_mask_path(manifest: DatasetManifest, rec: ImageRecord) -> Path:
    p = rec.resolve(manifest.root)
    return p.parent / (p.name[:-len(p.suffix)] + ".earmask.png")


def _run_align(manifest: DatasetManifest, cfg: PipelineConfig, stage_dir: Path,
               stats: PipelineStats) -> DatasetManifest:
    def one(rec: ImageRecord) -> ImageRecord:
        src = rec.resolve(manifest.root)
        mask_path = _ear_mask_path(manifest, rec)
        if not mask_path.is_file():
            from .errors import AlignmentError
            raise AlignmentError(f"no ear mask for record {rec.key} (expected {mask_path.name})")
        src_bytes = src.read_bytes()
        mask_bytes = mask_path.read_bytes()
        h8 = _hash_bytes(src_bytes, mask_bytes)
        stem = src.name[:-len(src.suffix)]
        rel = f"{rec.subject_id}/{stem}.{h8}.png"
        out_img = stage_dir / rel
        out_meta = stage_dir / f"{rec.subject_id}/{stem}.{h8}.align.json"
        if out_img.is_file() and out_meta.is_file():
            stats.add("align", cached=1)
        else:
            aligned, meta = align_image(
                load_image(src), load_mask(mask_path), k=cfg.k, pad_fill=cfg.pad_fill,
            )
            save_image(out_img, aligned)
            out_meta.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
            stats.add("align", computed=1)
        return replace(rec, stage="aligned", path=rel)

    new_records = _parallel(one, list(manifest.records), cfg.workers)
    return manifest.with_records(new_records, root=stage_dir)


def _run_detect(manifest: DatasetManifest, cfg: PipelineConfig, stage_dir: Path,
                stats: PipelineStats) -> dict[str, Path]:
    supervised = _SUPERVISED_DETECTORS[cfg.supervised_detector](cfg)
    zero_shot = _ZERO_SHOT_DETECTORS[cfg.zero_shot_detector](cfg)

    def one(rec: ImageRecord) -> tuple[str, Path]:
        src = rec.resolve(manifest.root)
        h8 = _hash_bytes(src.read_bytes())
        stem = src.name[:-len(src.suffix)]
        out = stage_dir / f"{rec.subject_id}/{stem}.{h8}.det.json"
        if out.is_file():
            stats.add("detect", cached=1)
        else:
            dets = detect_accessories(load_image(src), supervised, zero_shot, cfg.detector)
            save_detection_dump(out, rec.path, dets)
            stats.add("detect", computed=1)
        return rec.key, out

    return dict(_parallel(one, list(manifest.records), cfg.workers))


def _run_mask(manifest: DatasetManifest, cfg: PipelineConfig, stage_dir: Path,
              dumps: dict[str, Path], stats: PipelineStats) -> dict[str, Path]:
    segmenter = _SEGMENTERS[cfg.segmenter](cfg)

    def one(rec: ImageRecord) -> tuple[str, Path]:
        src = rec.resolve(manifest.root)
        dump = dumps[rec.key]
        h8 = _hash_bytes(src.read_bytes(), dump.read_bytes())
        stem = src.name[:-len(src.suffix)]
        out = stage_dir / f"{rec.subject_id}/{stem}.{h8}.mask.png"
        if out.is_file():
            stats.add("mask", cached=1)
        else:
            _, dets = load_detection_dump(dump)
            mask = build_accessory_mask(
                load_image(src), dets, segmenter,
                binarize_threshold=cfg.binarize_threshold, min_quality=cfg.min_quality,
            )
            if cfg.dilation_radius and mask.any():
                mask = dilate_mask(mask, cfg.dilation_radius)
            save_mask(out, mask)
            stats.add("mask", computed=1)
        return rec.key, out

    return dict(_parallel(one, list(manifest.records), cfg.workers))


def _run_inpaint(manifest: DatasetManifest, cfg: PipelineConfig, stage_dir: Path,
                 masks: dict[str, Path], stats: PipelineStats) -> DatasetManifest:
    inpainter = _INPAINTERS[cfg.inpainter](cfg)

    def one(rec: ImageRecord) -> ImageRecord:
        src = rec.resolve(manifest.root)
        mask_path = masks[rec.key]
        h8 = _hash_bytes(src.read_bytes(), mask_path.read_bytes())
        stem = src.name[:-len(src.suffix)]
        rel = f"{rec.subject_id}/{stem}.{h8}.inpainted.png"
        out = stage_dir / rel
        if out.is_file():
            stats.add("inpaint", cached=1)
        else:
            restored = restore(load_image(src), load_mask(mask_path), inpainter)
            save_image(out, restored)
            stats.add("inpaint", computed=1)
        return replace(rec, stage="inpainted", path=rel)

    new_records = _parallel(one, list(manifest.records), cfg.workers)
    return manifest.with_records(new_records, root=stage_dir)


class _CountingEmbedder:
    def __init__(self, inner, stats: PipelineStats):
        self.inner = inner
        self.descriptor = inner.descriptor
        self.stats = stats

    def embed(self, image):
        self.stats.add("embed", computed=1)
        return self.inner.embed(image)


@dataclass
class RunResult:
    condition: str
    manifest: DatasetManifest
    results_path: Path
    stats: PipelineStats
    aucs: tuple[float, ...]


def run_condition(cfg: PipelineConfig, manifest: DatasetManifest, out_dir: Path,
                  condition: str, cache_root: Path | None = None,
                  through: str | None = None) -> RunResult:
    """Execute the configured stages for one input condition.

    ``through`` truncates the stage list (used by the per-stage CLI commands).
    The baseline condition skips detect/mask/inpaint regardless of config.
    """
    if condition not in CONDITIONS:
        raise ConfigError(f"condition must be one of {CONDITIONS}, got {condition!r}")
    out_dir = Path(out_dir)
    cache_root = Path(cache_root) if cache_root is not None else Path(cfg.cache_dir)
    fps = stage_fingerprints(cfg)
    stats = PipelineStats()

    stages = list(cfg.stages)
    if condition == "baseline":
        stages = [s for s in stages if s not in _INPAINT_ONLY_STAGES]
    if through is not None:
        if through not in CANONICAL_STAGES:
            raise ConfigError(f"unknown stage {through!r}")
        stages = [s for s in stages if CANONICAL_STAGES.index(s) <= CANONICAL_STAGES.index(through)]

    current = manifest
    dumps: dict[str, Path] = {}
    mask_paths: dict[str, Path] = {}
    summary = None
    results_path = out_dir / f"results_{condition}.json"
    aucs: list[float] = []

    for stage in stages:
        if stage == "ingest":
            violations = validate_manifest(current)
            if violations:
                raise IngestionError("; ".join(violations))
        elif stage == "side_split":
            classifier = _SIDE_CLASSIFIERS[cfg.side_classifier](cfg)
            current = split_by_side(current, classifier)
        elif stage == "align":
            current = _run_align(current, cfg, cache_root / f"align-{fps['align']}", stats)
        elif stage == "detect":
            dumps = _run_detect(current, cfg, cache_root / f"detect-{fps['detect']}", stats)
        elif stage == "mask":
            mask_paths = _run_mask(current, cfg, cache_root / f"mask-{fps['mask']}",
                                   dumps, stats)
        elif stage == "inpaint":
            current = _run_inpaint(current, cfg, cache_root / f"inpaint-{fps['inpaint']}",
                                   mask_paths, stats)
        elif stage == "embed":
            pass  # embedding runs inside evaluate, once per trial
        elif stage == "evaluate":
            counts = pair_counts(current)
            embed_dir = cache_root / f"embed-{fps['embed']}" / condition
            scores0 = None
            subsample_meta = None
            descriptor = None
            for trial in range(cfg.trials):
                backend = _CountingEmbedder(
                    _EMBEDDERS[cfg.embedder](cfg, cfg.seed + trial), stats)
                descriptor = backend.descriptor
                cache = EmbeddingCache(embed_dir / f"trial{trial}", backend.descriptor)
                table = embed_manifest(current, backend, cache)
                scores = score_all_pairs(table, current)
                if cfg.max_impostor_pairs is not None:
                    scores, subsample_meta = subsample_impostors(
                        scores, cfg.max_impostor_pairs, cfg.subsample_seed)
                if trial == 0:
                    scores0 = scores
                from .verification import compute_auc
                aucs.append(compute_auc(scores))
            summary = aggregate_trials(aucs)
            save_results(results_path, current.name, descriptor, condition,
                         summary, counts, subsample=subsample_meta)
            emit_roc_plot(scores0, out_dir / f"roc_{condition}.svg")
            logger.info("%s %s: %s", current.name, condition, summary.formatted())

    return RunResult(condition=condition, manifest=current,
                     results_path=results_path, stats=stats, aucs=tuple(aucs))


def compare_conditions(results_baseline: str | Path,
                       results_inpainted: str | Path) -> dict:
    """Join two results files into a (model, patch, dataset) -> cell grid."""
    def as_grid(path):
        grid = {}
        for doc in load_results(path):
            key = (doc["backend"]["family"], int(doc["backend"]["patch_size"]),
                   doc["dataset"])
            grid[key] = aggregate_trials(doc["trials"])
        return grid

    base = as_grid(results_baseline)
    inp = as_grid(results_inpainted)
    if set(base) != set(inp):
        only_base = sorted(set(base) - set(inp))
        only_inp = sorted(set(inp) - set(base))
        raise ComparisonError(
            f"result grids differ; baseline-only: {only_base}, inpainted-only: {only_inp}"
        )
    return {key: make_cell(base[key], inp[key]) for key in base}


def write_reports(grid: dict, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt, filename in (("csv", "report.csv"), ("html", "report.html"),
                          ("text", "report.txt")):
        path = out_dir / filename
        path.write_text(render_comparison_table(grid, fmt=fmt))
        written.append(path)
    return written


def run_pipeline(cfg: PipelineConfig, manifest: DatasetManifest,
                 out_dir: str | Path,
                 cache_root: str | Path | None = None) -> dict[str, RunResult]:
    """Full run: both conditions plus the comparison report."""
    out_dir = Path(out_dir)
    results = {}
    for condition in CONDITIONS:
        results[condition] = run_condition(cfg, manifest, out_dir, condition,
                                           cache_root=cache_root)
    grid = compare_conditions(results["baseline"].results_path,
                              results["inpainted"].results_path)
    write_reports(grid, out_dir)
    return results
