"""Masked restoration through a pluggable inpainting backend.

This module owns the input-format normalization (grayscale replication, alpha
drop, nearest-neighbor mask conforming) and the composite step that copies
every background pixel from the input verbatim, so a backend can only ever
alter masked pixels regardless of how it repaints internally.
"""

from __future__ import annotations

import logging
from typing import Protocol

import numpy as np

from .errors import RestorationError
from .types import ensure_image, ensure_mask, image_dims

logger = logging.getLogger(__name__)


class InpainterBackend(Protocol):
    """Inpainting role: fill masked pixels of a 3-channel image."""

    def inpaint(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray: ...


def normalize_input(image: np.ndarray) -> np.ndarray:
    """Coerce to 3 channels: replicate grayscale, drop alpha, pass RGB through."""
    ensure_image(image)
    if image.ndim == 2:
        return np.repeat(image[:, :, None], 3, axis=2)
    c = image.shape[2]
    if c == 1:
        return np.repeat(image, 3, axis=2)
    if c == 3:
        return image.copy()
    if c == 4:
        return image[:, :, :3].copy()
    raise RestorationError(f"unsupported channel count: {c}")


def conform_mask(mask: np.ndarray, target_dims: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize to (W, H); identity when dims already match.

    Each target pixel takes the source pixel under its center, so the output
    is strictly binary by construction.
    """
    ensure_mask(mask)
    tw, th = target_dims
    if tw < 1 or th < 1:
        raise RestorationError(f"bad target dims: {target_dims}")
    sw, sh = image_dims(mask)
    if (sw, sh) == (tw, th):
        return mask.copy()
    rows = np.clip(((np.arange(th) + 0.5) * sh / th).astype(np.int64), 0, sh - 1)
    cols = np.clip(((np.arange(tw) + 0.5) * sw / tw).astype(np.int64), 0, sw - 1)
    return mask[np.ix_(rows, cols)]


def restore(image: np.ndarray, mask: np.ndarray, backend: InpainterBackend) -> np.ndarray:
    """Inpaint masked pixels; background pixels are bit-identical to the
    normalized input. An empty mask returns the normalized input unchanged."""
    norm = normalize_input(image)
    ensure_mask(mask)
    if not mask.any():
        return norm
    conformed = conform_mask(mask, image_dims(norm))
    try:
        painted = backend.inpaint(norm, conformed)
    except Exception as e:
        raise RestorationError(f"inpainting backend failed: {e}") from e
    painted = np.asarray(painted)
    if painted.shape != norm.shape or painted.dtype != np.uint8:
        raise RestorationError(
            f"backend returned shape {painted.shape} dtype {painted.dtype}, "
            f"expected {norm.shape} uint8"
        )
    return np.where(conformed[:, :, None], painted, norm)
