"""Mask perturbations that turn ground-truth masks into refinement-network
training inputs, and the square crop that network consumes.

Every generator takes an explicit ``numpy.random.Generator``; given the same
generator state the output is identical. :func:`augment_mask` applies the
perturbations in a fixed order: translate/rotate, add/cut, morphology,
ellipses.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

CROP_SIZE = 224


class AugmentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AugmentParams:
    rotation_range: tuple = (-10.0, 10.0)  # degrees
    translation_scale: float = 0.1  # fraction of the bounding-box diagonal
    addcut_fraction_range: tuple = (0.05, 0.2)
    morph_beta: tuple = (1.5, 10.0)
    morph_max_iterations: int = 3
    ellipse_rate: float = 2.0
    ellipse_gamma: tuple = (2.0, 3.0)  # shape, scale in pixels
    ellipse_box_margin: float = 0.1  # bounding-box dilation, fraction of diagonal
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.rotation_range
        if not -180 <= lo <= hi <= 180:
            raise ValueError("rotation_range must be ordered within [-180, 180]")
        flo, fhi = self.addcut_fraction_range
        if not 0 <= flo <= fhi <= 1:
            raise ValueError("addcut_fraction_range must be ordered within [0, 1]")
        if self.translation_scale < 0 or self.ellipse_box_margin < 0:
            raise ValueError("translation_scale and ellipse_box_margin must be >= 0")
        if min(self.morph_beta) <= 0 or min(self.ellipse_gamma) <= 0 or self.ellipse_rate < 0:
            raise ValueError("distribution parameters must be positive")
        if self.morph_max_iterations < 1:
            raise ValueError("morph_max_iterations must be >= 1")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def _check(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError("mask must be 2D")
    return m


def bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Inclusive ``(r0, r1, c0, c1)`` of the nonzero pixels."""
    rr, cc = np.nonzero(mask)
    return int(rr.min()), int(rr.max()), int(cc.min()), int(cc.max())


def bbox_diagonal(mask: np.ndarray) -> float:
    r0, r1, c0, c1 = bbox(mask)
    return math.hypot(r1 - r0 + 1, c1 - c0 + 1)


def augment_translate_rotate(mask: np.ndarray, params: AugmentParams, rng: np.random.Generator,
                             angle: float | None = None, shift: tuple | None = None) -> np.ndarray:
    """Rotate about the centroid (nearest neighbor), then translate.

    ``angle`` in degrees and ``shift`` as ``(drow, dcol)`` override the
    random draws. The random shift has a uniform direction and a magnitude
    uniform in ``[0, translation_scale * bbox diagonal]``.
    """
    m = _check(mask)
    if not m.any():
        return m.copy()
    if angle is None:
        angle = float(rng.uniform(*params.rotation_range))
    if shift is None:
        mag = rng.uniform(0.0, params.translation_scale * bbox_diagonal(m))
        phi = rng.uniform(0.0, 2 * math.pi)
        shift = (mag * math.sin(phi), mag * math.cos(phi))
    rr, cc = np.nonzero(m)
    cr, ccol = rr.mean(), cc.mean()
    h, w = m.shape
    orow, ocol = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output pixel -> source pixel
    y = orow - cr - shift[0]
    x = ocol - ccol - shift[1]
    t = math.radians(angle)
    ct, st = math.cos(t), math.sin(t)
    sx = ct * x + st * y + ccol
    sy = -st * x + ct * y + cr
    sr = np.rint(sy).astype(np.int64)
    sc = np.rint(sx).astype(np.int64)
    inside = (sr >= 0) & (sr < h) & (sc >= 0) & (sc < w)
    out = np.zeros_like(m)
    out[inside] = m[sr[inside], sc[inside]]
    return out


def augment_add_cut(mask: np.ndarray, params: AugmentParams, rng: np.random.Generator,
                    fraction: float | None = None, mode: str | None = None) -> np.ndarray:
    """Remove a region near the boundary, or copy it just outside the mask.

    The region is the ``round(fraction * area)`` mask pixels nearest to a
    random boundary pixel. ``mode`` is ``"cut"``, ``"add"`` or None (coin
    flip). Masks under 4 pixels are returned unchanged with an
    :class:`AugmentWarning`.
    """
    m = _check(mask)
    area = int(m.sum())
    if area < 4:
        warnings.warn("mask too small for add/cut; left unchanged", AugmentWarning, stacklevel=2)
        return m.copy()
    if fraction is None:
        fraction = float(rng.uniform(*params.addcut_fraction_range))
    if mode is None:
        mode = "cut" if rng.random() < 0.5 else "add"
    if mode not in ("cut", "add"):
        raise ValueError(f"unknown add/cut mode {mode!r}")
    k = int(round(fraction * area))
    if k == 0:
        return m.copy()
    edge = m & ~ndimage.binary_erosion(m, np.ones((3, 3), bool), border_value=0)
    er, ec = np.nonzero(edge)
    pick = int(rng.integers(len(er)))
    br, bc = er[pick], ec[pick]
    rr, cc = np.nonzero(m)
    order = np.argsort((rr - br) ** 2 + (cc - bc) ** 2, kind="stable")[:k]
    pr, pc = rr[order], cc[order]
    out = m.copy()
    if mode == "cut":
        out[pr, pc] = False
        return out
    # push the region outward along centroid -> boundary pixel until it clears the mask
    v = np.array([br - rr.mean(), bc - cc.mean()])
    n = np.linalg.norm(v)
    v = v / n if n > 0 else np.array([0.0, 1.0])
    h, w = m.shape
    for step in range(1, h + w):
        qr = np.rint(pr + step * v[0]).astype(np.int64)
        qc = np.rint(pc + step * v[1]).astype(np.int64)
        inside = (qr >= 0) & (qr < h) & (qc >= 0) & (qc < w)
        if not inside.any():
            break
        if not m[qr[inside], qc[inside]].any():
            out[qr[inside], qc[inside]] = True
            break
    return out


def augment_morph(mask: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """1 to ``morph_max_iterations`` rounds of erosion or dilation with a
    square kernel whose side is a Beta-distributed fraction of the bounding
    box diagonal (at least 1)."""
    m = _check(mask)
    if not m.any():
        return m.copy()
    n = int(rng.integers(1, params.morph_max_iterations + 1))
    diag = bbox_diagonal(m)
    out = m.copy()
    for _ in range(n):
        side = max(1, int(math.ceil(rng.beta(*params.morph_beta) * diag)))
        kernel = np.ones((side, side), dtype=bool)
        if rng.random() < 0.5:
            out = ndimage.binary_erosion(out, kernel, border_value=0)
        else:
            out = ndimage.binary_dilation(out, kernel)
    return out


def rasterize_ellipse(shape: tuple, center: tuple, radii: tuple, angle: float) -> np.ndarray:
    """Pixels whose centers satisfy the rotated-ellipse inequality.

    ``center`` is ``(row, col)``, ``radii`` ``(a, b)`` along the rotated
    x and y axes, ``angle`` in radians counterclockwise from +x.
    """
    h, w = shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    x = cc - center[1]
    y = rr - center[0]
    ct, st = math.cos(angle), math.sin(angle)
    u = (x * ct + y * st) / radii[0]
    v = (-x * st + y * ct) / radii[1]
    return u * u + v * v <= 1.0


def augment_ellipses(mask: np.ndarray, params: AugmentParams, rng: np.random.Generator,
                     mode: str | None = None) -> np.ndarray:
    """Add or remove ``Poisson(ellipse_rate)`` random filled ellipses.

    Centers are uniform in the mask's bounding box grown by
    ``ellipse_box_margin`` of its diagonal; both radii are Gamma-distributed
    and the angle is uniform. ``mode`` forces ``"add"`` or ``"remove"``.
    """
    m = _check(mask)
    if not m.any():
        return m.copy()
    count = int(rng.poisson(params.ellipse_rate))
    r0, r1, c0, c1 = bbox(m)
    pad = params.ellipse_box_margin * bbox_diagonal(m)
    out = m.copy()
    for _ in range(count):
        center = (rng.uniform(r0 - pad, r1 + pad), rng.uniform(c0 - pad, c1 + pad))
        radii = tuple(float(v) for v in rng.gamma(params.ellipse_gamma[0], params.ellipse_gamma[1], size=2))
        angle = float(rng.uniform(0.0, math.pi))
        add = rng.random() < 0.5 if mode is None else mode == "add"
        e = rasterize_ellipse(m.shape, center, radii, angle)
        out = (out | e) if add else (out & ~e)
    return out


def augment_mask(mask: np.ndarray, params: AugmentParams = AugmentParams(),
                 rng: np.random.Generator | None = None) -> np.ndarray:
    rng = params.rng() if rng is None else rng
    out = augment_translate_rotate(mask, params, rng)
    if out.sum() >= 4:
        out = augment_add_cut(out, params, rng)
    out = augment_morph(out, params, rng)
    return augment_ellipses(out, params, rng)


def crop_box(mask: np.ndarray, padding_fraction: float = 0.25) -> tuple[int, int, int, int]:
    """Half-open ``(r0, r1, c0, c1)``: a square around the mask bounding box,
    grown by ``padding_fraction`` of its side on every side, clipped to the
    frame."""
    m = _check(mask)
    if not m.any():
        raise ValueError("crop needs a nonempty mask")
    if padding_fraction < 0:
        raise ValueError("padding_fraction must be >= 0")
    r0, r1, c0, c1 = bbox(m)
    side = max(r1 - r0 + 1, c1 - c0 + 1) * (1 + 2 * padding_fraction)
    side = int(round(side))
    cr = (r0 + r1 + 1) / 2.0
    cc = (c0 + c1 + 1) / 2.0
    top = int(math.floor(cr - side / 2.0 + 0.5))
    left = int(math.floor(cc - side / 2.0 + 0.5))
    h, w = m.shape
    return max(top, 0), min(top + side, h), max(left, 0), min(left + side, w)


def crop_mask(mask: np.ndarray, box: tuple, size: int = CROP_SIZE) -> np.ndarray:
    """Nearest-neighbor resize of ``mask[r0:r1, c0:c1]`` to ``size x size``."""
    r0, r1, c0, c1 = box
    patch = Image.fromarray((_check(mask)[r0:r1, c0:c1] * 255).astype(np.uint8))
    return np.asarray(patch.resize((size, size), Image.NEAREST)) > 127


def prepare_rrn_crop(rgb: np.ndarray, mask: np.ndarray, padding_fraction: float = 0.25,
                     size: int = CROP_SIZE) -> np.ndarray:
    """``(size, size, 4)`` float32 crop: RGB in [0, 1] (bilinear) and the
    mask in {0, 1} (nearest)."""
    img = np.asarray(rgb)
    m = _check(mask)
    if img.shape[:2] != m.shape or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("rgb must be (H, W, 3) matching the mask")
    box = crop_box(m, padding_fraction)
    r0, r1, c0, c1 = box
    patch = Image.fromarray(np.ascontiguousarray(img[r0:r1, c0:c1]).astype(np.uint8))
    out = np.empty((size, size, 4), dtype=np.float32)
    out[..., :3] = np.asarray(patch.resize((size, size), Image.BILINEAR), dtype=np.float32) / 255.0
    out[..., 3] = crop_mask(m, box, size)
    return out
