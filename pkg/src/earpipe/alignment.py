"""Geometric normalization: estimate the ear's vertical axis, rotate upright,
crop to the ear mask, resize to 112x112.

Angles are degrees counterclockwise from image vertical, in (-90, 90]. The
axis estimate comes from straight line segments found on the mask boundary by
a probabilistic Hough transform; orientations of the k longest segments are
averaged on the doubled-angle circle with length weights, which resolves the
180-degree ambiguity of undirected lines. When no segment qualifies (compact
blobs have no straight boundary runs) the estimate falls back to the mask's
second-moment principal axis with confidence 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage
from skimage.transform import probabilistic_hough_line

from .errors import AlignmentError
from .types import ensure_image, ensure_mask

logger = logging.getLogger(__name__)

OUT_SIZE = (112, 112)
PAD_FILLS = ("black", "replicate", "reflect")

# Hough extraction settings. The vote threshold and the extent-relative
# minimum segment length are chosen so that boundaries with genuine straight
# runs (elongated masks) always yield segments while smoothly curved
# boundaries yield none and take the moment-axis fallback: a chord of length L
# on a boundary of curvature radius R bows out by about L^2/8R, so requiring
# L >= 0.45 * extent keeps every chord a disk or ellipse can offer more than a
# pixel off straight. Three fixed transform seeds are merged for stability.
_HOUGH_THRESHOLD = 20
_HOUGH_GAP = 1
_MIN_LENGTH_FRAC = 0.45
_MIN_LENGTH_FLOOR = 12
_HOUGH_SEEDS = (0, 1, 2)

_SE3 = np.ones((3, 3), dtype=bool)

_BORDER = {
    "black": cv2.BORDER_CONSTANT,
    "replicate": cv2.BORDER_REPLICATE,
    "reflect": cv2.BORDER_REFLECT,
}


@dataclass(frozen=True)
class AxisEstimate:
    """angle: degrees CCW from vertical in (-90, 90]; support: segments used;
    confidence: support / k."""

    angle: float
    support: int
    confidence: float

    def to_json(self) -> dict:
        return {"angle": self.angle, "support": self.support, "confidence": self.confidence}


def _normalize_angle(deg: float) -> float:
    while deg <= -90.0:
        deg += 180.0
    while deg > 90.0:
        deg -= 180.0
    return deg


def _boundary(mask: np.ndarray) -> np.ndarray:
    eroded = ndimage.binary_erosion(mask, structure=_SE3, border_value=0)
    return mask & ~eroded


def _line_segments(mask: np.ndarray) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    ys, xs = np.nonzero(mask)
    extent = int(max(ys.max() - ys.min(), xs.max() - xs.min())) + 1
    min_len = max(_MIN_LENGTH_FLOOR, int(round(_MIN_LENGTH_FRAC * extent)))
    boundary = _boundary(mask)
    segments = []
    seen = set()
    for seed in _HOUGH_SEEDS:
        found = probabilistic_hough_line(
            boundary, threshold=_HOUGH_THRESHOLD, line_length=min_len,
            line_gap=_HOUGH_GAP, rng=seed,
        )
        for p0, p1 in found:
            key = (p0, p1) if p0 <= p1 else (p1, p0)
            if key not in seen:
                seen.add(key)
                segments.append((p0, p1))
    return segments


def _moment_axis(mask: np.ndarray) -> float:
    """Orientation of the principal (long) axis from second central moments."""
    ys, xs = np.nonzero(mask)
    x = xs - xs.mean()
    y = ys - ys.mean()
    mu20 = float((x * x).mean())
    mu02 = float((y * y).mean())
    mu11 = float((x * y).mean())
    # 2a here is the doubled angle measured from the vertical (y) axis
    return _normalize_angle(0.5 * math.degrees(math.atan2(2.0 * mu11, mu02 - mu20)))


def estimate_vertical_axis(ear_mask: np.ndarray, k: int = 5) -> AxisEstimate:
    ensure_mask(ear_mask)
    if k < 1:
        raise AlignmentError(f"k must be >= 1, got {k}")
    if not ear_mask.any():
        raise AlignmentError("no ear region")

    segments = _line_segments(ear_mask)
    # longest first; coordinates break ties so the selection is deterministic
    segments.sort(key=lambda s: (-((s[1][0] - s[0][0]) ** 2 + (s[1][1] - s[0][1]) ** 2), s))
    segments = segments[:k]
    if not segments:
        return AxisEstimate(angle=_moment_axis(ear_mask), support=0, confidence=0.0)

    sin2 = cos2 = 0.0
    for p0, p1 in segments:
        dx = float(p1[0] - p0[0])
        dy = float(p1[1] - p0[1])
        if dy < 0 or (dy == 0 and dx < 0):
            dx, dy = -dx, -dy
        length = math.hypot(dx, dy)
        # atan2(dx, dy) measures from the +y (vertical) axis; array y grows
        # downward, so this comes out CCW-positive in image terms
        a = math.atan2(dx, dy)
        sin2 += length * math.sin(2.0 * a)
        cos2 += length * math.cos(2.0 * a)
    angle = _normalize_angle(0.5 * math.degrees(math.atan2(sin2, cos2)))
    return AxisEstimate(angle=angle, support=len(segments), confidence=len(segments) / k)


def rotate_bound(img: np.ndarray, deg: float, *, flags=cv2.INTER_LINEAR,
                 border=cv2.BORDER_CONSTANT) -> np.ndarray:
    """Rotate by deg (CCW positive) about the center, growing the canvas so
    no content is clipped."""
    h, w = img.shape[:2]
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    m = cv2.getRotationMatrix2D(center, deg, 1.0)
    cos, sin = abs(m[0, 0]), abs(m[0, 1])
    # round before ceil so right-angle rotations don't gain a pixel to float fuzz
    nw = int(np.ceil(round(w * cos + h * sin, 7)))
    nh = int(np.ceil(round(w * sin + h * cos, 7)))
    m[0, 2] += (nw - 1) / 2.0 - center[0]
    m[1, 2] += (nh - 1) / 2.0 - center[1]
    return cv2.warpAffine(img, m, (nw, nh), flags=flags, borderMode=border)


def rotate_upright(image: np.ndarray, angle: float, pad_fill: str = "black") -> np.ndarray:
    """Rotate the image by -angle so a feature tilted by `angle` becomes vertical."""
    ensure_image(image)
    if not -90.0 < angle <= 90.0:
        raise AlignmentError(f"angle must be in (-90, 90], got {angle}")
    if pad_fill not in _BORDER:
        raise AlignmentError(f"pad_fill must be one of {PAD_FILLS}, got {pad_fill!r}")
    if angle == 0.0:
        return image.copy()
    return rotate_bound(image, -angle, flags=cv2.INTER_LINEAR, border=_BORDER[pad_fill])


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight (x_min, y_min, x_max, y_max) of mask foreground."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise AlignmentError("no ear region")
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def crop_and_resize(image: np.ndarray, ear_mask: np.ndarray,
                    out_size: tuple[int, int] = OUT_SIZE) -> np.ndarray:
    """Crop to the mask's tight bounding box, then bilinear-resize to out_size."""
    ensure_image(image)
    try:
        ensure_mask(ear_mask, (image.shape[1], image.shape[0]))
    except ValueError as e:
        raise AlignmentError(str(e)) from e
    x0, y0, x1, y1 = mask_bbox(ear_mask)
    crop = image[y0:y1, x0:x1]
    return cv2.resize(crop, tuple(out_size), interpolation=cv2.INTER_LINEAR)


def align_image(image: np.ndarray, ear_mask: np.ndarray, k: int = 5,
                pad_fill: str = "black",
                out_size: tuple[int, int] = OUT_SIZE) -> tuple[np.ndarray, dict]:
    """Full per-image alignment: estimate axis, rotate image and mask together,
    crop to the rotated mask, resize.

    Returns the aligned image and a metadata dict {angle, support, confidence,
    crop_box} for the alignment sidecar.
    """
    estimate = estimate_vertical_axis(ear_mask, k=k)
    if estimate.angle == 0.0:
        rot_img, rot_mask = image.copy(), ear_mask.copy()
    else:
        rot_img = rotate_upright(image, estimate.angle, pad_fill=pad_fill)
        rot_mask = rotate_bound(
            ear_mask.astype(np.uint8) * 255, -estimate.angle,
            flags=cv2.INTER_NEAREST, border=cv2.BORDER_CONSTANT,
        ) > 127
    if not rot_mask.any():
        raise AlignmentError("ear mask vanished during rotation")
    aligned = crop_and_resize(rot_img, rot_mask, out_size=out_size)
    meta = estimate.to_json()
    meta["crop_box"] = list(mask_bbox(rot_mask))
    return aligned, meta
