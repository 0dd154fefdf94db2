"""2D center voting: Hough accumulation over discretized directions, center
selection with non-maximum suppression, and initial mask assembly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit, resolve_backend
from .core import BACKGROUND, FIRST_OBJECT, TABLE

# Summed cosine similarity is accumulated in fixed point so the result is
# independent of voter order and of the backend.
SOFT_SCALE = 1 << 20


@dataclass(frozen=True)
class HoughParams:
    num_angle_bins: int = 100
    inlier_threshold: float = 0.9
    distance_threshold: float = 20.0
    percentage_threshold: float = 0.5
    nms_radius: int = 10
    pixel_stride: int = 10
    # mask assembly; None reuses the accumulation thresholds
    assign_inlier_threshold: float | None = None
    assign_distance_threshold: float | None = None
    snap_radius: float = 2.0

    def __post_init__(self):
        if self.num_angle_bins < 4:
            raise ValueError("num_angle_bins must be >= 4")
        if not 0 <= self.percentage_threshold <= 1:
            raise ValueError("percentage_threshold must be in [0, 1]")
        if self.distance_threshold <= 0:
            raise ValueError("distance_threshold must be positive")
        if self.nms_radius < 1 or self.pixel_stride < 1:
            raise ValueError("nms_radius and pixel_stride must be >= 1")
        if self.snap_radius < 0:
            raise ValueError("snap_radius must be >= 0")

    @property
    def assign_inlier(self) -> float:
        return self.inlier_threshold if self.assign_inlier_threshold is None else self.assign_inlier_threshold

    @property
    def assign_distance(self) -> float:
        return self.distance_threshold if self.assign_distance_threshold is None else self.assign_distance_threshold


@dataclass(frozen=True, eq=False)
class HoughAccumulator:
    """Binary angle-bin occupancy per candidate pixel.

    ``soft`` holds the fixed-point sum of inlier cosine similarities for each
    candidate; it only breaks ties between equal bin scores during NMS.
    """

    bins: np.ndarray
    soft: np.ndarray | None = None

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.uint8)
        if b.ndim != 3:
            raise ValueError("bins must be (H, W, A)")
        object.__setattr__(self, "bins", b)
        soft = np.zeros(b.shape[:2], np.int64) if self.soft is None else np.asarray(self.soft, np.int64)
        if soft.shape != b.shape[:2]:
            raise ValueError("soft must be (H, W)")
        object.__setattr__(self, "soft", soft)

    @property
    def num_angle_bins(self) -> int:
        return self.bins.shape[2]

    def score(self) -> np.ndarray:
        return self.bins.sum(axis=2, dtype=np.int64) / self.num_angle_bins


def cosine_distance(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    num = np.sum(u * v, axis=-1)
    den = np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1)
    return 1.0 - num / den


def angle_bin(dx, dy, num_bins: int):
    """Bin of the angle of ``(dx, dy)`` against +x, mapped to [0, 2*pi)."""
    ang = np.arctan2(dy, dx)
    ang = np.where(ang < 0, ang + 2 * np.pi, ang)
    return np.minimum((num_bins * ang / (2 * np.pi)).astype(np.int64), num_bins - 1)


def _voters(foreground: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(foreground)
    return rows[::stride], cols[::stride]


@njit
def _hough_numba(vr, vc, vx, vy, height, width, num_bins, eps_it, eps_d, scale):
    bins = np.zeros((height, width, num_bins), np.uint8)
    soft = np.zeros((height, width), np.int64)
    reach = int(math.ceil(eps_d))
    eps_d2 = eps_d * eps_d
    two_pi = 2.0 * math.pi
    for k in range(vr.shape[0]):
        r = vr[k]
        c = vc[k]
        ux = vx[k]
        uy = vy[k]
        un = math.sqrt(ux * ux + uy * uy)
        if un == 0.0:
            continue
        for dy in range(-reach, reach + 1):
            rr = r + dy
            if rr < 0 or rr >= height:
                continue
            for dx in range(-reach, reach + 1):
                d2 = dx * dx + dy * dy
                if d2 == 0 or d2 >= eps_d2:
                    continue
                cc = c + dx
                if cc < 0 or cc >= width:
                    continue
                cos = (dx * ux + dy * uy) / (math.sqrt(d2) * un)
                if 1.0 - cos < eps_it:
                    ang = math.atan2(dy, dx)
                    if ang < 0.0:
                        ang += two_pi
                    a = int(num_bins * ang / two_pi)
                    if a >= num_bins:
                        a = num_bins - 1
                    bins[rr, cc, a] = 1
                    soft[rr, cc] += int(round(cos * scale))
    return bins, soft


def _hough_numpy(vr, vc, vx, vy, height, width, num_bins, eps_it, eps_d, scale):
    bins = np.zeros((height, width, num_bins), np.uint8)
    soft = np.zeros(height * width, np.int64)
    reach = int(math.ceil(eps_d))
    un = np.hypot(vx, vy)
    keep = un > 0
    vr, vc, vx, vy, un = vr[keep], vc[keep], vx[keep], vy[keep], un[keep]
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            d2 = dx * dx + dy * dy
            if d2 == 0 or d2 >= eps_d * eps_d:
                continue
            rr = vr + dy
            cc = vc + dx
            cos = (dx * vx + dy * vy) / (math.sqrt(d2) * un)
            ok = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width) & (1.0 - cos < eps_it)
            if not ok.any():
                continue
            a = int(angle_bin(dx, dy, num_bins))
            bins[rr[ok], cc[ok], a] = 1
            np.add.at(soft, rr[ok] * width + cc[ok], np.round(cos[ok] * scale).astype(np.int64))
    return bins, soft.reshape(height, width)


def hough_accumulate(foreground: np.ndarray, dirs: np.ndarray, params: HoughParams = HoughParams(),
                     backend: str | None = None) -> HoughAccumulator:
    """Accumulate angle-bin evidence for every candidate center pixel.

    A voter ``p`` (every ``pixel_stride``-th foreground pixel in raster
    order) marks bin ``a`` at candidate ``p_c`` when the cosine distance
    between ``p_c - p`` and its direction is below ``inlier_threshold`` and
    ``|p_c - p| < distance_threshold``. ``a`` is the bin of the angle of
    ``p_c - p``.
    """
    fg = np.asarray(foreground, dtype=bool)
    d = np.asarray(dirs, dtype=np.float64)
    if d.shape != fg.shape + (2,):
        raise ValueError(f"dirs shape {d.shape} does not match foreground {fg.shape}")
    height, width = fg.shape
    vr, vc = _voters(fg, params.pixel_stride)
    vx = np.ascontiguousarray(d[vr, vc, 0])
    vy = np.ascontiguousarray(d[vr, vc, 1])
    args = (vr.astype(np.int64), vc.astype(np.int64), vx, vy, height, width,
            params.num_angle_bins, float(params.inlier_threshold),
            float(params.distance_threshold), float(SOFT_SCALE))
    if resolve_backend(backend) == "numba":
        bins, soft = _hough_numba(*args)
    else:
        bins, soft = _hough_numpy(*args)
    return HoughAccumulator(bins, soft)


def select_centers(acc: HoughAccumulator, params: HoughParams = HoughParams()) -> list[tuple[int, int]]:
    """Local maxima of the bin-fraction score above ``percentage_threshold``.

    A pixel survives when its key ``(score, soft, -row, -col)`` is strictly
    the largest inside the square window of radius ``nms_radius``. Returned
    centers are ``(row, col)`` sorted by descending key.
    """
    counts = acc.bins.sum(axis=2, dtype=np.int64)
    score = counts / acc.num_angle_bins
    soft = acc.soft
    height, width = counts.shape
    cand = np.argwhere((score >= params.percentage_threshold) & (counts > 0))
    r = params.nms_radius
    out = []
    for pr, pc in cand:
        r0, r1 = max(pr - r, 0), min(pr + r + 1, height)
        c0, c1 = max(pc - r, 0), min(pc + r + 1, width)
        wc = counts[r0:r1, c0:c1]
        ws = soft[r0:r1, c0:c1]
        me_c, me_s = counts[pr, pc], soft[pr, pc]
        if (wc > me_c).any():
            continue
        tied = (wc == me_c) & (ws > me_s)
        if tied.any():
            continue
        same = np.argwhere((wc == me_c) & (ws == me_s))
        same_r = same[:, 0] + r0
        same_c = same[:, 1] + c0
        # lexicographically smallest pixel wins exact ties
        if ((same_r < pr) | ((same_r == pr) & (same_c < pc))).any():
            continue
        out.append((int(pr), int(pc)))
    out.sort(key=lambda p: (-counts[p], -soft[p], p[0], p[1]))
    return out


def assemble_masks_2d(foreground: np.ndarray, dirs: np.ndarray, centers, inlier_threshold: float = 0.9,
                      distance_threshold: float = 20.0, table: np.ndarray | None = None,
                      snap_radius: float = 0.0) -> np.ndarray:
    """Assign each foreground pixel to the nearest center it points to.

    Center ``k`` receives label ``k + 2``. Foreground pixels pointing at no
    center within ``distance_threshold`` get 0. Pixels within
    ``snap_radius`` of a center (always including the center pixel itself)
    qualify for it whatever their direction: a detected center is an integer
    pixel while the directions aim at a sub-pixel point, so the immediate
    neighbors' directions say little. Distance ties go to the earlier center
    in the list. Non-foreground pixels are 0, or 1 where ``table`` is set.
    """
    fg = np.asarray(foreground, dtype=bool)
    d = np.asarray(dirs, dtype=np.float64)
    labels = np.full(fg.shape, BACKGROUND, dtype=np.int64)
    if table is not None:
        labels[np.asarray(table, dtype=bool) & ~fg] = TABLE
    pr, pc = np.nonzero(fg)
    if len(centers) == 0 or len(pr) == 0:
        return labels
    cen = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    # (N, K) offsets from pixel to center in (x, y) = (col, row)
    ox = cen[None, :, 1] - pc[:, None]
    oy = cen[None, :, 0] - pr[:, None]
    dist = np.hypot(ox, oy)
    vx = d[pr, pc, 0][:, None]
    vy = d[pr, pc, 1][:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = (ox * vx + oy * vy) / (dist * np.hypot(vx, vy))
    ok = (dist <= snap_radius) | ((1.0 - cos < inlier_threshold) & (dist < distance_threshold))
    masked = np.where(ok, dist, np.inf)
    best = np.argmin(masked, axis=1)  # first index on ties
    hit = np.isfinite(masked[np.arange(len(pr)), best])
    labels[pr, pc] = np.where(hit, best + FIRST_OBJECT, BACKGROUND)
    return labels


def segment_2d(foreground: np.ndarray, dirs: np.ndarray, params: HoughParams = HoughParams(),
               table: np.ndarray | None = None, backend: str | None = None):
    """Full 2D voting: accumulate, select centers, assemble masks."""
    acc = hough_accumulate(foreground, dirs, params, backend=backend)
    centers = select_centers(acc, params)
    labels = assemble_masks_2d(foreground, dirs, centers, params.assign_inlier,
                               params.assign_distance, table=table, snap_radius=params.snap_radius)
    return labels, centers
