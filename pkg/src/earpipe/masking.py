"""Box-to-mask conversion and mask refinement.

Soft masks from a promptable-segmentation backend are binarized, unioned over
all accepted candidates, then refined with one 3x3 erosion followed by a 5x5
median filter. The refinement runs once on the merged union.
"""

from __future__ import annotations

import logging
from typing import Protocol

import numpy as np
from scipy import ndimage

from .errors import MaskingError
from .types import BoundingBox, Detection, ensure_image, ensure_mask, image_dims

logger = logging.getLogger(__name__)

_SE3 = np.ones((3, 3), dtype=bool)


class SegmenterBackend(Protocol):
    """Box-prompted segmentation role.

    Returns (soft mask, quality) candidates; each soft mask is a float score
    grid with the image's spatial dimensions.
    """

    def segment(self, image: np.ndarray, box: BoundingBox,
                multi_mask: bool) -> list[tuple[np.ndarray, float]]: ...


def binarize(soft_mask: np.ndarray, threshold: float) -> np.ndarray:
    """Foreground iff score >= threshold."""
    soft = np.asarray(soft_mask, dtype=np.float64)
    if not np.all(np.isfinite(soft)):
        raise MaskingError("soft mask contains non-finite scores")
    return soft >= threshold


def merge_masks(masks: list[np.ndarray], dims: tuple[int, int]) -> np.ndarray:
    """Pixel-wise OR; the empty list yields the all-background mask."""
    w, h = dims
    out = np.zeros((h, w), dtype=bool)
    for m in masks:
        try:
            ensure_mask(m, dims)
        except ValueError as e:
            raise MaskingError(str(e)) from e
        out |= m
    return out


def refine_mask(mask: np.ndarray) -> np.ndarray:
    """One erosion with a full 3x3 element, then a 5x5 median filter.

    The median filter replicates edge values so the image border itself does
    not erode foreground.
    """
    ensure_mask(mask)
    eroded = ndimage.binary_erosion(mask, structure=_SE3, border_value=0)
    med = ndimage.median_filter(eroded.astype(np.uint8), size=5, mode="nearest")
    return med.astype(bool)


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a full (2r+1)x(2r+1) element; r=0 is identity."""
    ensure_mask(mask)
    if radius < 0:
        raise MaskingError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0:
        return mask.copy()
    se = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(mask, structure=se, border_value=0)


def build_accessory_mask(image: np.ndarray, detections: list[Detection],
                         seg: SegmenterBackend, binarize_threshold: float = 0.5,
                         min_quality: float = 0.5) -> np.ndarray:
    """Segment each detection box, accept candidates by quality, union, refine.

    No detections, no accepted candidates, or an empty union all produce the
    empty mask, which downstream restoration treats as "leave unchanged".
    """
    ensure_image(image)
    dims = image_dims(image)
    binarized = []
    for det in detections:
        try:
            candidates = seg.segment(image, det.box, multi_mask=True)
        except Exception as e:
            raise MaskingError(f"segmenter failed on box {det.box.as_list()}: {e}") from e
        for soft, quality in candidates:
            if quality >= min_quality:
                binarized.append(binarize(soft, binarize_threshold))
    union = merge_masks(binarized, dims)
    if not union.any():
        return union
    return refine_mask(union)
