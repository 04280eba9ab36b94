"""Accessory localization: hybrid supervised + zero-shot detector frontend.

Both backends are pluggable; this module owns prompt formatting, threshold and
area-ratio filtering, and the union of the two proposal streams. Overlapping
boxes are deliberately not deduplicated here: the downstream mask union
absorbs duplicates.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import ConfigError, DetectionError
from .types import Detection, ensure_image, image_dims

logger = logging.getLogger(__name__)

DEFAULT_PROMPT_TERMS = ("earring", "wireless earbud", "hearing aid")


class DetectorBackend(Protocol):
    """Detector role: maps an image (and optional text prompt) to proposals.

    Returned boxes are expected to be clamped to image bounds; the pipeline
    clamps defensively anyway.
    """

    def detect(self, image: np.ndarray, prompt: str | None) -> list[Detection]: ...


@dataclass(frozen=True)
class DetectorConfig:
    box_threshold: float = 0.35
    text_threshold: float = 0.25
    max_area_ratio: float = 0.8
    prompt_terms: tuple[str, ...] = DEFAULT_PROMPT_TERMS

    def __post_init__(self):
        for name in ("box_threshold", "text_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 < self.max_area_ratio <= 1.0:
            raise ConfigError(f"max_area_ratio must be in (0, 1], got {self.max_area_ratio}")
        object.__setattr__(self, "prompt_terms", tuple(self.prompt_terms))


def format_text_prompt(terms) -> str:
    """Lowercase and trim each phrase, join with ". ", terminate with "."."""
    terms = list(terms)
    if not terms:
        raise ConfigError("prompt terms must not be empty")
    cleaned = [t.strip().lower() for t in terms]
    if any(not t for t in cleaned):
        raise ConfigError(f"blank prompt term in {terms!r}")
    return ". ".join(cleaned) + "."


def filter_detections(dets: list[Detection], cfg: DetectorConfig,
                      image_dims: tuple[int, int]) -> list[Detection]:
    """Keep detections passing confidence, text-alignment and area-ratio checks.

    The text check is skipped when the score is absent (supervised backend);
    the area-ratio constraint applies to every source. Order is preserved.
    """
    w, h = image_dims
    total = float(w * h)
    kept = []
    for d in dets:
        if d.confidence < cfg.box_threshold:
            continue
        if d.text_alignment is not None and d.text_alignment < cfg.text_threshold:
            continue
        if d.box.area / total > cfg.max_area_ratio:
            continue
        kept.append(d)
    return kept


def detect_accessories(image: np.ndarray, supervised: DetectorBackend,
                       zero_shot: DetectorBackend, cfg: DetectorConfig) -> list[Detection]:
    """Union of filtered proposals from both backends, supervised first."""
    ensure_image(image)
    dims = image_dims(image)
    prompt = format_text_prompt(cfg.prompt_terms)

    def query(backend: DetectorBackend, name: str, prompt: str | None) -> list[Detection]:
        try:
            dets = backend.detect(image, prompt)
        except Exception as e:
            raise DetectionError(f"{name} backend failed: {e}") from e
        return [replace(d, box=d.box.clamp(dims)) for d in dets]

    merged = filter_detections(query(supervised, "supervised", None), cfg, dims)
    merged += filter_detections(query(zero_shot, "zero_shot", prompt), cfg, dims)
    return merged


def save_detection_dump(path: str | Path, image_path: str, dets: list[Detection]) -> None:
    """Detection dump JSON, shared by the cache and the replay mock."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"image": image_path, "detections": [d.to_json() for d in dets]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_detection_dump(path: str | Path) -> tuple[str, list[Detection]]:
    doc = json.loads(Path(path).read_text())
    return doc["image"], [Detection.from_json(d) for d in doc["detections"]]
