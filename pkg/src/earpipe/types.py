"""Shared domain types: images, masks, boxes, detections, manifests, embeddings.

Images are numpy uint8 arrays, (H, W) or (H, W, C) with C in {1, 3, 4}, in
OpenCV channel order. Masks are boolean (H, W) arrays. Both are treated as
immutable values once constructed; nothing here mutates pixel buffers.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

from .errors import IngestionError

logger = logging.getLogger(__name__)

EMBED_DIM = 512

SIDES = ("left", "right", "unknown")
STAGES = ("raw", "aligned", "inpainted")
SOURCES = ("supervised", "zero_shot")


# ---------------------------------------------------------------------------
# raster images and binary masks

def ensure_image(arr: np.ndarray) -> np.ndarray:
    """Validate an image array and return it unchanged."""
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        raise ValueError(f"image dtype must be uint8, got {a.dtype}")
    if a.ndim == 2:
        h, w = a.shape
    elif a.ndim == 3:
        h, w, c = a.shape
        if c not in (1, 3, 4):
            raise ValueError(f"image channels must be 1, 3 or 4, got {c}")
    else:
        raise ValueError(f"image must be 2-D or 3-D, got shape {a.shape}")
    if h < 1 or w < 1:
        raise ValueError(f"image dimensions must be positive, got {a.shape}")
    return a


def channel_count(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def image_dims(img: np.ndarray) -> tuple[int, int]:
    """(width, height) of an image or mask array."""
    return img.shape[1], img.shape[0]


def ensure_mask(mask: np.ndarray, dims: tuple[int, int] | None = None) -> np.ndarray:
    """Validate a binary mask, optionally against expected (W, H) dims."""
    m = np.asarray(mask)
    if m.dtype != np.bool_:
        raise ValueError(f"mask dtype must be bool, got {m.dtype}")
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    if dims is not None and image_dims(m) != tuple(dims):
        raise ValueError(f"mask dims {image_dims(m)} != expected {tuple(dims)}")
    return m


def load_image(path: str | Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise IngestionError(f"unreadable image: {path}")
    return ensure_image(img)


def save_image(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), ensure_image(img)):
        raise OSError(f"failed to write image: {path}")


def load_mask(path: str | Path) -> np.ndarray:
    img = load_image(path)
    if img.ndim == 3:
        img = img[:, :, 0]
    return img > 127


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    ensure_mask(mask)
    save_image(path, mask.astype(np.uint8) * 255)


# ---------------------------------------------------------------------------
# boxes and detections

@dataclass(frozen=True)
class BoundingBox:
    """Pixel-coordinate box with exclusive-free corner semantics: x_min < x_max."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box: {self.as_list()}")

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def clamp(self, dims: tuple[int, int]) -> "BoundingBox":
        """Clamp to image bounds given (W, H); raises if nothing remains."""
        w, h = dims
        if self.x_min >= w or self.x_max <= 0 or self.y_min >= h or self.y_max <= 0:
            raise ValueError(f"box {self.as_list()} lies outside {dims}")
        return BoundingBox(max(self.x_min, 0), max(self.y_min, 0),
                           min(self.x_max, w), min(self.y_max, h))


@dataclass(frozen=True)
class Detection:
    """One scored accessory proposal from a detector backend."""

    box: BoundingBox
    confidence: float
    source: str
    label: str
    text_alignment: float | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown detection source: {self.source!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")
        if (self.text_alignment is not None) != (self.source == "zero_shot"):
            raise ValueError("text_alignment must be present iff source is zero_shot")
        if self.text_alignment is not None and not 0.0 <= self.text_alignment <= 1.0:
            raise ValueError(f"text_alignment out of range: {self.text_alignment}")

    def to_json(self) -> dict:
        d = {
            "box": self.box.as_list(),
            "confidence": self.confidence,
            "source": self.source,
            "label": self.label,
        }
        if self.text_alignment is not None:
            d["text_alignment"] = self.text_alignment
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Detection":
        return cls(
            box=BoundingBox(*(int(v) for v in d["box"])),
            confidence=float(d["confidence"]),
            source=d["source"],
            label=d["label"],
            text_alignment=(float(d["text_alignment"]) if "text_alignment" in d else None),
        )


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class ImageRecord:
    subject_id: str
    side: str
    stage: str
    path: str
    source_dataset: str = ""

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"unknown side: {self.side!r}")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage: {self.stage!r}")

    @property
    def key(self) -> str:
        """Record key, unique within a manifest (the relative path)."""
        return self.path

    def resolve(self, root: Path) -> Path:
        return root / self.path


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple[ImageRecord, ...]
    side_split: bool = False
    root: Path = field(default=Path("."), compare=False)

    def identity_key(self, rec: ImageRecord) -> str:
        return f"{rec.subject_id}/{rec.side}" if self.side_split else rec.subject_id

    def identities(self) -> dict[str, list[ImageRecord]]:
        """Identity key -> records, in first-appearance order.

        With side splitting enabled, records whose side is unknown carry no
        usable identity and are excluded (logged, not fatal).
        """
        out: dict[str, list[ImageRecord]] = {}
        skipped = 0
        for rec in self.records:
            if self.side_split and rec.side == "unknown":
                skipped += 1
                continue
            out.setdefault(self.identity_key(rec), []).append(rec)
        if skipped:
            logger.warning(
                "%s: excluded %d record(s) with unknown side from identity split",
                self.name, skipped,
            )
        return out

    def with_records(self, records: list[ImageRecord], **kw) -> "DatasetManifest":
        return replace(self, records=tuple(records), **kw)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise IngestionError(f"unreadable manifest {path}: {e}") from e
    try:
        records = tuple(
            ImageRecord(
                subject_id=str(r["subject_id"]),
                side=r.get("side", "unknown"),
                stage=r.get("stage", "raw"),
                path=r["path"],
                source_dataset=r.get("source_dataset", ""),
            )
            for r in doc["records"]
        )
        return DatasetManifest(
            name=str(doc["name"]),
            records=records,
            side_split=bool(doc.get("side_split", False)),
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise IngestionError(f"malformed manifest {path}: {e}") from e


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    doc = {
        "name": manifest.name,
        "side_split": manifest.side_split,
        "records": [
            {
                "subject_id": r.subject_id,
                "side": r.side,
                "stage": r.stage,
                "path": r.path,
                **({"source_dataset": r.source_dataset} if r.source_dataset else {}),
            }
            for r in manifest.records
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def validate_manifest(manifest: DatasetManifest) -> list[str]:
    """Hard invariant violations, empty if the manifest is usable.

    Unknown-side records under side splitting are a warning (see identities()),
    not a violation.
    """
    violations = []
    seen = set()
    for rec in manifest.records:
        if rec.key in seen:
            violations.append(f"record {rec.path}: duplicate path")
        seen.add(rec.key)
        if manifest.side_split and "/" in rec.subject_id:
            violations.append(
                f"record {rec.path}: subject_id {rec.subject_id!r} contains '/', "
                "identity keys would collide"
            )
        if not rec.resolve(manifest.root).is_file():
            violations.append(f"record {rec.path}: file not found")
    if len(manifest.identities()) < 2:
        violations.append("verification requires N ≥ 2")
    return violations


# ---------------------------------------------------------------------------
# embeddings

@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    record_ref: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float32)
        if v.shape != (EMBED_DIM,):
            raise ValueError(f"embedding must have shape ({EMBED_DIM},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding has non-finite components")
        if not math.isfinite(float(np.dot(v, v))) or float(np.dot(v, v)) == 0.0:
            raise ValueError("embedding has zero norm")
        object.__setattr__(self, "vector", v)
