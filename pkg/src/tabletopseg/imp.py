"""Initial mask processing: per-instance opening, closing and
largest-connected-component cleanup."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BACKGROUND, FIRST_OBJECT, object_ids


@dataclass(frozen=True)
class MorphParams:
    open_kernel: int = 1
    close_kernel: int = 1
    connectivity: int = 8

    def __post_init__(self):
        if self.open_kernel < 0 or self.close_kernel < 0:
            raise ValueError("kernel radii must be >= 0")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


def _square(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erosion by a (2r+1)-square; pixels outside the frame count as empty."""
    m = np.asarray(mask, dtype=bool)
    if radius == 0 or not m.any():
        return m.copy()
    return ndimage.binary_erosion(m, _square(radius), border_value=0)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if radius == 0 or not m.any():
        return m.copy()
    return ndimage.binary_dilation(m, _square(radius))


def opening(mask: np.ndarray, radius: int) -> np.ndarray:
    return dilate(erode(mask, radius), radius)


def closing(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilation then erosion, computed on a padded canvas so the frame edge
    does not eat into the mask."""
    m = np.asarray(mask, dtype=bool)
    if radius == 0 or not m.any():
        return m.copy()
    pad = 2 * radius
    big = np.pad(m, pad)
    out = erode(dilate(big, radius), radius)
    return out[pad:-pad, pad:-pad]


def _structure(connectivity: int) -> np.ndarray:
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


def largest_component(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Keep the largest connected component; on equal size the one whose
    first pixel comes first in raster order wins."""
    m = np.asarray(mask, dtype=bool)
    lab, n = ndimage.label(m, structure=_structure(connectivity))
    if n <= 1:
        return m.copy()
    sizes = np.bincount(lab.ravel())[1:]
    # ndimage.label numbers components in raster order of their first pixel
    return lab == (int(np.argmax(sizes)) + 1)


def process_masks(labels: np.ndarray, params: MorphParams = MorphParams()) -> np.ndarray:
    """Open, close and keep the largest component of every object mask.

    Background and table pixels are kept unless an object claims them.
    Where closed masks overlap, the lower label wins. Instances that vanish
    are dropped and the rest are compacted to ``2..K+1``.
    """
    lab = np.asarray(labels, dtype=np.int64)
    out = np.where(lab >= FIRST_OBJECT, BACKGROUND, lab)
    claimed = np.zeros(lab.shape, dtype=bool)
    nxt = FIRST_OBJECT
    for k in object_ids(lab):
        m = lab == k
        m = opening(m, params.open_kernel)
        m = closing(m, params.close_kernel)
        m = largest_component(m, params.connectivity)
        m &= ~claimed
        if not m.any():
            continue
        # the overlap rule can split what remains; keep it one piece
        m = largest_component(m, params.connectivity)
        out[m] = nxt
        claimed |= m
        nxt += 1
    return out
