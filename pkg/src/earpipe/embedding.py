"""Embedding extraction and side splitting via pluggable backends.

The embedding cache is one raw little-endian float32 file per backend
descriptor plus a JSON index mapping cache key to byte offset. Cache keys
combine the record key with a content hash of the image file, so an edited
image never replays a stale vector.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Protocol

import cv2
import numpy as np

from .errors import EmbeddingError, SideSplitError
from .restoration import normalize_input
from .types import (
    EMBED_DIM, DatasetManifest, Embedding, ImageRecord, ensure_image, load_image,
)

logger = logging.getLogger(__name__)

EXPECTED_DIMS = (112, 112)


class EmbedderBackend(Protocol):
    """Embedding role: 112x112x3 image -> 512-D vector.

    ``descriptor`` identifies the model family and patch size, e.g.
    {"family": "ViT_T", "patch_size": 16} or {"family": "mock", "patch_size": 16}.
    """

    descriptor: dict

    def embed(self, image: np.ndarray) -> np.ndarray: ...


class SideClassifierBackend(Protocol):
    """Side-labeling role: image -> "left" or "right"."""

    def classify(self, image: np.ndarray) -> str: ...


def _content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:12]


class EmbeddingCache:
    """Append-only vector store: ``<family>_p<patch>.emb`` + ``.idx.json``."""

    def __init__(self, directory: str | Path, descriptor: dict):
        self.directory = Path(directory)
        stem = f"{descriptor['family']}_p{descriptor['patch_size']}"
        self.emb_path = self.directory / f"{stem}.emb"
        self.idx_path = self.directory / f"{stem}.idx.json"
        self.index: dict[str, int] = {}
        if self.idx_path.is_file():
            self.index = {k: int(v) for k, v in json.loads(self.idx_path.read_text()).items()}

    def get(self, key: str) -> np.ndarray | None:
        offset = self.index.get(key)
        if offset is None:
            return None
        with open(self.emb_path, "rb") as f:
            f.seek(offset)
            vec = np.frombuffer(f.read(EMBED_DIM * 4), dtype="<f4")
        if vec.shape != (EMBED_DIM,):
            raise EmbeddingError(f"cache entry for {key!r} is truncated")
        return vec.copy()

    def put(self, key: str, vec: np.ndarray) -> None:
        vec = np.ascontiguousarray(vec, dtype="<f4")
        self.directory.mkdir(parents=True, exist_ok=True)
        with open(self.emb_path, "ab") as f:
            self.index[key] = f.tell()
            f.write(vec.tobytes())

    def save_index(self) -> None:
        if self.index:
            self.directory.mkdir(parents=True, exist_ok=True)
            self.idx_path.write_text(json.dumps(self.index, indent=2, sort_keys=True) + "\n")


def embed_manifest(manifest: DatasetManifest, backend: EmbedderBackend,
                   cache: EmbeddingCache | None = None) -> dict[str, Embedding]:
    """One embedding per record, keyed by record key, in manifest order."""
    table: dict[str, Embedding] = {}
    hits = 0
    for rec in manifest.records:
        if rec.stage not in ("aligned", "inpainted"):
            raise EmbeddingError(f"record {rec.key}: stage {rec.stage!r} cannot be embedded")
        data = rec.resolve(manifest.root).read_bytes() if rec.resolve(manifest.root).is_file() else None
        if data is None:
            raise EmbeddingError(f"record {rec.key}: file not found")
        img = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise EmbeddingError(f"record {rec.key}: unreadable image")
        ensure_image(img)
        if (img.shape[1], img.shape[0]) != EXPECTED_DIMS:
            raise EmbeddingError(
                f"record {rec.key}: expected {EXPECTED_DIMS[0]}x{EXPECTED_DIMS[1]} input, "
                f"got {img.shape[1]}x{img.shape[0]}"
            )
        img = normalize_input(img)

        cache_key = f"{rec.key}@{_content_hash(data)}"
        vec = cache.get(cache_key) if cache is not None else None
        if vec is None:
            vec = np.asarray(backend.embed(img), dtype=np.float32)
            if cache is not None:
                cache.put(cache_key, vec)
        else:
            hits += 1
        table[rec.key] = Embedding(vector=vec, record_ref=rec.key)
    if cache is not None:
        cache.save_index()
    if hits:
        logger.info("%s: %d/%d embeddings from cache", manifest.name, hits, len(manifest.records))
    return table


def split_by_side(manifest: DatasetManifest,
                  classifier: SideClassifierBackend) -> DatasetManifest:
    """Label unknown-side records via the classifier and enable side splitting.

    Already-labeled records pass through untouched, which makes the operation
    idempotent.
    """
    records: list[ImageRecord] = []
    classified = 0
    for rec in manifest.records:
        if rec.side != "unknown":
            records.append(rec)
            continue
        try:
            side = classifier.classify(load_image(rec.resolve(manifest.root)))
        except Exception as e:
            raise SideSplitError(f"side classifier failed on {rec.key}: {e}") from e
        if side not in ("left", "right"):
            raise SideSplitError(f"classifier returned {side!r} for {rec.key}")
        records.append(ImageRecord(rec.subject_id, side, rec.stage, rec.path, rec.source_dataset))
        classified += 1
    if classified:
        logger.info("%s: classified %d unknown-side record(s)", manifest.name, classified)
    return manifest.with_records(records, side_split=True)
