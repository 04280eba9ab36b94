"""Deterministic mock backends and a synthetic dataset generator.

These stand-ins replace the four heavy model backends (accessory detector,
box-prompted segmenter, inpainter, embedder) with dependency-free rules, so
the full pipeline and its acceptance checks run at desk scale. Identical
construction arguments always produce identical behavior on identical inputs.

The synthetic "ears" are stadium-shaped (a rectangle with semicircular caps):
elongated like an ear mask, with genuinely straight flanks so the axis
estimator's line transform has something to find. Identity comes from a
per-identity shape, base intensity, and a few dark spots at fixed
template-relative positions; occluded images additionally get a bright
accessory disk. Intensity bands are kept disjoint on purpose: everything that
is not an accessory stays at or below 210 while accessory cores stay at or
above 240, which lets tests identify accessory pixels in any frame by
brightness alone.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path

import cv2
import numpy as np

from .alignment import rotate_bound
from .detection import save_detection_dump
from .types import (
    BoundingBox, DatasetManifest, Detection, ImageRecord, ensure_image,
    save_image, save_manifest, save_mask,
)

logger = logging.getLogger(__name__)

# intensity discipline for synthetic data, see module docstring
NON_ACCESSORY_CEILING = 210
ACCESSORY_FLOOR = 240


# ---------------------------------------------------------------------------
# detector mocks

class NullDetector:
    """Returns no detections; stands in for a disabled backend."""

    def detect(self, image, prompt):
        return []


class FixedBoxDetector:
    """Replays a fixed detection list regardless of input."""

    def __init__(self, detections):
        self.detections = list(detections)

    def detect(self, image, prompt):
        return list(self.detections)


class BrightSpotDetector:
    """Finds connected components of saturated-bright pixels and boxes them
    with a small margin. Works in any frame, which matters because detection
    runs after alignment has changed all coordinates."""

    def __init__(self, threshold: int = ACCESSORY_FLOOR, margin: int = 3,
                 confidence: float = 0.9, min_area: int = 4,
                 label: str = "ear accessory", source: str = "supervised"):
        self.threshold = threshold
        self.margin = margin
        self.confidence = confidence
        self.min_area = min_area
        self.label = label
        self.source = source

    def detect(self, image, prompt):
        ensure_image(image)
        gray = image if image.ndim == 2 else image.max(axis=2)
        bright = (gray >= self.threshold).astype(np.uint8)
        n, labels = cv2.connectedComponents(bright, connectivity=8)
        h, w = gray.shape
        dets = []
        for comp in range(1, n):
            ys, xs = np.nonzero(labels == comp)
            if len(ys) < self.min_area:
                continue
            box = BoundingBox(
                int(xs.min()) - self.margin, int(ys.min()) - self.margin,
                int(xs.max()) + 1 + self.margin, int(ys.max()) + 1 + self.margin,
            ).clamp((w, h))
            text = 0.9 if self.source == "zero_shot" else None
            dets.append(Detection(box=box, confidence=self.confidence,
                                  source=self.source, label=self.label,
                                  text_alignment=text))
        dets.sort(key=lambda d: (d.box.y_min, d.box.x_min))
        return dets


class SidecarReplayDetector:
    """Replays detection-dump annotations, keyed by image content.

    Built from (image pixels, detections) pairs; at detect time the incoming
    image's pixel bytes select the recorded detections. Images without a
    recorded entry produce no detections.
    """

    def __init__(self):
        self._table: dict[bytes, list[Detection]] = {}

    @staticmethod
    def _key(image: np.ndarray) -> bytes:
        return image.shape.__repr__().encode() + image.tobytes()

    def record(self, image: np.ndarray, detections) -> None:
        self._table[self._key(np.asarray(image))] = list(detections)

    def detect(self, image, prompt):
        return list(self._table.get(self._key(np.asarray(image)), []))


# ---------------------------------------------------------------------------
# segmenter mock

class InscribedEllipseSegmenter:
    """Box prompt -> the ellipse inscribed in the box, as a hard 0/1 score
    grid with high quality. With multi-mask enabled a second, half-size
    candidate at deliberately low quality exercises the acceptance filter."""

    def __init__(self, quality: float = 0.9, alt_quality: float = 0.3):
        self.quality = quality
        self.alt_quality = alt_quality

    @staticmethod
    def _ellipse(dims_hw, box: BoundingBox, shrink: float) -> np.ndarray:
        h, w = dims_hw
        cy = (box.y_min + box.y_max - 1) / 2.0
        cx = (box.x_min + box.x_max - 1) / 2.0
        ry = max(box.height * shrink / 2.0, 1.0)
        rx = max(box.width * shrink / 2.0, 1.0)
        yy, xx = np.mgrid[0:h, 0:w]
        inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        return inside.astype(np.float32)

    def segment(self, image, box, multi_mask):
        dims = image.shape[:2]
        out = [(self._ellipse(dims, box, 1.0), self.quality)]
        if multi_mask:
            out.append((self._ellipse(dims, box, 0.5), self.alt_quality))
        return out


# ---------------------------------------------------------------------------
# inpainter mock

class HarmonicInpainter:
    """Fills masked pixels by iterative 4-neighbor averaging (Jacobi sweeps)
    until convergence: a deterministic, smooth, boundary-conditioned fill.

    Masked pixels start at the mean of the unmasked pixels (127 when the mask
    covers everything); neighbors beyond the border replicate the edge pixel.
    Stops when no masked pixel moves by more than ``tol`` intensity levels or
    after ``max_sweeps`` sweeps.
    """

    def __init__(self, max_sweeps: int = 500, tol: float = 0.5):
        self.max_sweeps = max_sweeps
        self.tol = tol

    def inpaint(self, image, mask):
        img = np.asarray(image, dtype=np.float64)
        m = np.asarray(mask, dtype=bool)
        cur = img.copy()
        if m.all():
            cur[:] = 127.0
        else:
            cur[m] = img[~m].mean(axis=0)
        for _ in range(self.max_sweeps):
            padded = np.pad(cur, ((1, 1), (1, 1), (0, 0)), mode="edge")
            avg = (padded[:-2, 1:-1] + padded[2:, 1:-1]
                   + padded[1:-1, :-2] + padded[1:-1, 2:]) / 4.0
            delta = float(np.abs(avg[m] - cur[m]).max()) if m.any() else 0.0
            cur[m] = avg[m]
            if delta < self.tol:
                break
        return np.clip(np.rint(cur), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# embedder and side-classifier mocks

class ProjectionEmbedder:
    """Seeded random 512-row projection of the mean-centered pixel vector,
    normalized to unit length.

    Nearby images in pixel space land nearby in embedding space, so aligned
    synthetic identities form tight clusters with known separability. The
    projection matrix is built lazily (it is 512 x 37632) and shared
    read-only across threads.
    """

    def __init__(self, seed: int, family: str = "mock", patch_size: int = 16,
                 dims: tuple[int, int, int] = (112, 112, 3)):
        self.seed = int(seed)
        self.descriptor = {"family": family, "patch_size": patch_size}
        self._dims = dims
        self._projection: np.ndarray | None = None
        self._lock = threading.Lock()

    def _matrix(self) -> np.ndarray:
        with self._lock:
            if self._projection is None:
                rng = np.random.default_rng(self.seed)
                n = int(np.prod(self._dims))
                self._projection = rng.standard_normal((512, n), dtype=np.float32)
            return self._projection

    def embed(self, image):
        img = np.asarray(image)
        if img.shape != self._dims:
            raise ValueError(f"expected {self._dims} input, got {img.shape}")
        x = img.astype(np.float32).ravel()
        x -= x.mean()
        v = self._matrix() @ x
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            # constant image; any fixed unit vector keeps the contract
            return np.full(512, 1.0 / np.sqrt(512.0), dtype=np.float32)
        return (v / norm).astype(np.float32)


class HalfBrightnessSideClassifier:
    """Labels the side whose image half holds more intensity mass."""

    def classify(self, image):
        gray = image if image.ndim == 2 else image.mean(axis=2)
        w = gray.shape[1]
        left = float(gray[:, :w // 2].sum())
        right = float(gray[:, (w + 1) // 2:].sum())
        return "left" if left >= right else "right"


# ---------------------------------------------------------------------------
# synthetic dataset

_CANVAS = 128


def _stadium(canvas: int, cx: int, cy: int, hw: int, hl: int) -> np.ndarray:
    m = np.zeros((canvas, canvas), np.uint8)
    cv2.rectangle(m, (cx - hw, cy - hl), (cx + hw, cy + hl), 255, -1)
    cv2.circle(m, (cx, cy - hl), hw, 255, -1)
    cv2.circle(m, (cx, cy + hl), hw, 255, -1)
    return m


def _identity_params(seed: int, ident: int) -> dict:
    rng = np.random.default_rng([seed, ident])
    hw = int(rng.integers(11, 16))
    hl = int(rng.integers(32, 41))
    spots = [
        (
            int(rng.integers(-hw + 4, hw - 3)),
            int(rng.integers(-hl + 4, hl - 3)),
            int(rng.integers(2, 5)),
            int(rng.integers(80, 111)),
        )
        for _ in range(3)
    ]
    return {
        "hw": hw,
        "hl": hl,
        "base": int(rng.integers(145, 181)),
        "spots": spots,
        "acc_dx": int(rng.integers(-3, 4)),
        "acc_dy": int(rng.integers(round(hl * 0.5), round(hl * 0.8))),
        "acc_r": int(rng.integers(7, 10)),
    }


def _render_image(seed: int, ident: int, index: int, params: dict,
                  occluded: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (image, ear mask, accessory mask), all canvas-sized."""
    rng = np.random.default_rng([seed, ident, index])
    hw, hl = params["hw"], params["hl"]
    side = 2 * (hl + hw) + 13
    c = side // 2

    template = np.zeros((side, side), np.float64)
    tmask = _stadium(side, c, c, hw, hl) > 0
    template[tmask] = params["base"]
    for dx, dy, r, intensity in params["spots"]:
        cv2.circle(template, (c + dx, c + dy), r, float(intensity), -1)
    template[~tmask] = 0.0

    theta = float(rng.uniform(-25.0, 25.0))
    rot = rotate_bound(template.astype(np.uint8), theta, flags=cv2.INTER_NEAREST)
    rot_mask = rotate_bound(tmask.astype(np.uint8) * 255, theta,
                            flags=cv2.INTER_NEAREST) > 127

    # rotate the accessory anchor with the same matrix rotate_bound used
    rh, rw = rot.shape[:2]
    center = ((side - 1) / 2.0, (side - 1) / 2.0)
    m = cv2.getRotationMatrix2D(center, theta, 1.0)
    m[0, 2] += (rw - 1) / 2.0 - center[0]
    m[1, 2] += (rh - 1) / 2.0 - center[1]
    ax, ay = m @ np.array([c + params["acc_dx"], c + params["acc_dy"], 1.0])

    # paste the content-tight crop of the rotated template into the canvas
    # with a small deterministic jitter; the stadium fits in a radius-55
    # circle, so the crop always fits the 128px canvas
    ys0, xs0 = np.nonzero(rot_mask)
    by0, bx0 = int(ys0.min()), int(xs0.min())
    sub = rot[by0:int(ys0.max()) + 1, bx0:int(xs0.max()) + 1]
    submask = rot_mask[by0:int(ys0.max()) + 1, bx0:int(xs0.max()) + 1]
    sh, sw = sub.shape
    jx = int(rng.integers(-3, 4))
    jy = int(rng.integers(-3, 4))
    ox = (_CANVAS - sw) // 2 + jx
    oy = (_CANVAS - sh) // 2 + jy

    gradient = np.linspace(25, 55, _CANVAS)[:, None]
    background = gradient + rng.normal(0.0, 4.0, (_CANVAS, _CANVAS))
    img = np.clip(background, 0, 70)

    ear_mask = np.zeros((_CANVAS, _CANVAS), bool)
    ear_mask[oy:oy + sh, ox:ox + sw] = submask
    values = sub[submask] + rng.normal(0.0, 5.0, int(submask.sum()))
    img[ear_mask] = np.clip(values, 75, 205)

    acc_mask = np.zeros((_CANVAS, _CANVAS), bool)
    if occluded:
        r = params["acc_r"]
        acx = int(np.clip(round(ax - bx0 + ox + rng.integers(-2, 3)), r + 2, _CANVAS - r - 3))
        acy = int(np.clip(round(ay - by0 + oy + rng.integers(-2, 3)), r + 2, _CANVAS - r - 3))
        disk = np.zeros((_CANVAS, _CANVAS), np.uint8)
        cv2.circle(disk, (acx, acy), r, 255, -1)
        acc_mask = disk > 0
        tex = 245.0 + rng.normal(0.0, 2.0, int(acc_mask.sum()))
        img[acc_mask] = np.clip(tex, ACCESSORY_FLOOR, 250)

    return np.clip(np.rint(img), 0, 255).astype(np.uint8), ear_mask, acc_mask


def synth_dataset(n_identities: int, images_per_identity: int,
                  occlusion_rate: float, seed: int,
                  root: str | Path) -> DatasetManifest:
    """Generate a synthetic ear dataset with ground truth under ``root``.

    Per image: the image itself, an ear-mask sidecar (consumed by alignment),
    a ground-truth accessory mask, and a detection dump holding the accessory
    box (empty for clean images). Writes ``manifest.json`` at the root and
    returns the manifest. Identical arguments produce byte-identical trees.
    """
    if n_identities < 1 or images_per_identity < 1:
        raise ValueError("counts must be >= 1")
    if not 0.0 <= occlusion_rate <= 1.0:
        raise ValueError(f"occlusion rate must be in [0, 1], got {occlusion_rate}")
    root = Path(root)
    total = n_identities * images_per_identity
    n_occluded = int(round(occlusion_rate * total))
    order = np.random.default_rng([seed, 0xACC]).permutation(total)
    occluded_flat = set(int(v) for v in order[:n_occluded])

    records = []
    flat = 0
    for ident in range(n_identities):
        params = _identity_params(seed, ident)
        subject = f"s{ident:02d}"
        for index in range(images_per_identity):
            occluded = flat in occluded_flat
            img, ear_mask, acc_mask = _render_image(seed, ident, index, params, occluded)
            stem = root / subject / f"i{index:02d}"
            save_image(stem.with_suffix(".png"), img)
            save_mask(Path(str(stem) + ".earmask.png"), ear_mask)
            save_mask(Path(str(stem) + ".accmask.png"), acc_mask)
            dets = []
            if acc_mask.any():
                ys, xs = np.nonzero(acc_mask)
                box = BoundingBox(int(xs.min()), int(ys.min()),
                                  int(xs.max()) + 1, int(ys.max()) + 1)
                dets = [Detection(box=box, confidence=0.9, source="supervised",
                                  label="ear accessory")]
            save_detection_dump(Path(str(stem) + ".det.json"),
                                f"{subject}/i{index:02d}.png", dets)
            records.append(ImageRecord(
                subject_id=subject,
                side="left" if ident % 2 == 0 else "right",
                stage="raw",
                path=f"{subject}/i{index:02d}.png",
                source_dataset="synth",
            ))
            flat += 1

    manifest = DatasetManifest(name="synth", records=tuple(records), root=root)
    save_manifest(manifest, root / "manifest.json")
    return manifest
