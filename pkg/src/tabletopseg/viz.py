"""PNG rendering of label maps with an optional center-vote overlay."""
from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BACKGROUND, FIRST_OBJECT, TABLE

TABLE_COLOR = (96, 96, 96)
VOTE_COLOR = (255, 255, 255)
PALETTE_SIZE = 64


def _palette(n: int = PALETTE_SIZE) -> np.ndarray:
    # golden-ratio hue steps keep neighboring ids far apart in color
    cols = []
    for k in range(n):
        h = (k * 0.618033988749895) % 1.0
        s = 0.85 if k % 2 == 0 else 0.6
        v = 1.0 if (k // 2) % 2 == 0 else 0.8
        cols.append([int(round(255 * c)) for c in colorsys.hsv_to_rgb(h, s, v)])
    return np.array(cols, dtype=np.uint8)


PALETTE = _palette()


def colorize(labels: np.ndarray) -> np.ndarray:
    """``(H, W, 3)`` uint8: background black, table gray, objects from a
    fixed palette (ids beyond its length wrap around)."""
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 2:
        raise ValueError("labels must be 2D")
    out = np.zeros(lab.shape + (3,), dtype=np.uint8)
    out[lab == TABLE] = TABLE_COLOR
    obj = lab >= FIRST_OBJECT
    out[obj] = PALETTE[(lab[obj] - FIRST_OBJECT) % len(PALETTE)]
    return out


def overlay_votes(image: np.ndarray, votes2d: np.ndarray, radius: int = 1,
                  color=VOTE_COLOR) -> np.ndarray:
    """Draw ``(N, 2)`` pixel positions ``(row, col)`` as filled squares;
    points outside the frame are skipped."""
    img = np.array(image, dtype=np.uint8, copy=True)
    h, w = img.shape[:2]
    pts = np.rint(np.asarray(votes2d, dtype=np.float64).reshape(-1, 2)).astype(np.int64)
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            r = pts[:, 0] + dr
            c = pts[:, 1] + dc
            ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
            img[r[ok], c[ok]] = color
    return img


def render(labels: np.ndarray, rgb: np.ndarray | None = None, votes2d: np.ndarray | None = None,
           alpha: float = 0.5) -> np.ndarray:
    """Colorized labels, blended over ``rgb`` when given, with votes on top."""
    img = colorize(labels)
    if rgb is not None:
        base = np.asarray(rgb, dtype=np.float64)
        if base.shape != img.shape:
            raise ValueError("rgb must match the label map")
        lab = np.asarray(labels)
        blend = np.rint((1 - alpha) * base + alpha * img).astype(np.uint8)
        img = np.where((lab != BACKGROUND)[..., None], blend, np.asarray(rgb, dtype=np.uint8))
    if votes2d is not None and len(votes2d):
        img = overlay_votes(img, votes2d)
    return img


def save_png(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(Path(path), format="PNG", optimize=False)
