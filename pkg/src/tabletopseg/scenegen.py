"""Synthetic tabletop scenes rendered by analytic ray casting.

The world frame has ``+z`` up, the floor at ``z = 0`` and the table top at
``z = table_height``, centered on the origin. Rays are cast with camera
directions ``(x, y, 1)`` rotated into the world, so the ray parameter at a
hit is the z-depth of that point in the camera frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (BACKGROUND, FIRST_OBJECT, TABLE, CameraIntrinsics, OrganizedCloud,
                   SceneSample, backproject, lift, project, semantic_classes)

EPS = 1e-9
REFERENCE_PIXELS = 640 * 480


class SceneError(RuntimeError):
    pass


def scaled_pixel_count(height: int, width: int, base: int = 500) -> int:
    """``base`` pixels at 640x480, scaled by image area (rounded up)."""
    return int(math.ceil(base * height * width / REFERENCE_PIXELS))


# primitives ---------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point`` with normal ``normal``."""

    point: tuple
    normal: tuple

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        denom = dirs @ n
        num = (np.asarray(self.point) - origin) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        return np.where((np.abs(denom) > EPS) & (t > EPS), t, np.inf)


@dataclass(frozen=True)
class TableTop:
    """Horizontal rectangle ``|x| <= length/2, |y| <= width/2`` at ``height``."""

    height: float
    length: float
    width: float

    def intersect(self, origin, dirs):
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.height - origin[2]) / dz
        x = origin[0] + t * dirs[:, 0]
        y = origin[1] + t * dirs[:, 1]
        ok = (np.abs(dz) > EPS) & (t > EPS) & (np.abs(x) <= self.length / 2) & (np.abs(y) <= self.width / 2)
        return np.where(ok, t, np.inf)

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return abs(x) <= self.length / 2 - margin and abs(y) <= self.width / 2 - margin


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    kind: str = field(default="sphere", init=False)

    def intersect(self, origin, dirs):
        oc = origin - np.asarray(self.center)
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2.0 * dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - 4 * a * c
        with np.errstate(invalid="ignore"):
            t = (-b - np.sqrt(disc)) / (2 * a)
        return np.where((disc >= 0) & (t > EPS), t, np.inf)

    @property
    def footprint(self) -> float:
        return self.radius

    def corners(self) -> np.ndarray:
        return _aabb_corners(np.asarray(self.center), np.full(3, self.radius))

    def describe(self) -> dict:
        return {"kind": self.kind, "center": [float(v) for v in self.center], "radius": float(self.radius)}


@dataclass(frozen=True)
class Box:
    """Box with half extents ``half`` rotated by ``yaw`` radians about +z."""

    center: tuple
    half: tuple
    yaw: float = 0.0
    kind: str = field(default="box", init=False)

    def _rot(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def intersect(self, origin, dirs):
        rot = self._rot()
        o = (origin - np.asarray(self.center)) @ rot
        d = dirs @ rot
        h = np.asarray(self.half)
        t0 = np.full(len(d), -np.inf)
        t1 = np.full(len(d), np.inf)
        for k in range(3):
            dk = d[:, k]
            par = np.abs(dk) < EPS
            with np.errstate(divide="ignore", invalid="ignore"):
                a = (-h[k] - o[k]) / dk
                b = (h[k] - o[k]) / dk
            lo = np.where(par, np.where(abs(o[k]) <= h[k], -np.inf, np.inf), np.minimum(a, b))
            hi = np.where(par, np.where(abs(o[k]) <= h[k], np.inf, -np.inf), np.maximum(a, b))
            t0 = np.maximum(t0, lo)
            t1 = np.minimum(t1, hi)
        return np.where((t0 <= t1) & (t0 > EPS), t0, np.inf)

    @property
    def footprint(self) -> float:
        return math.hypot(self.half[0], self.half[1])

    def corners(self) -> np.ndarray:
        h = np.asarray(self.half)
        local = _aabb_corners(np.zeros(3), h)
        return local @ self._rot().T + np.asarray(self.center)

    def describe(self) -> dict:
        return {"kind": self.kind, "center": [float(v) for v in self.center],
                "half_extents": [float(v) for v in self.half], "yaw": float(self.yaw)}


@dataclass(frozen=True)
class Cylinder:
    """Upright cylinder (axis along +z)."""

    center: tuple
    radius: float
    half_height: float
    kind: str = field(default="cylinder", init=False)

    def intersect(self, origin, dirs):
        o = origin - np.asarray(self.center)
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        a = dx * dx + dy * dy
        b = 2 * (o[0] * dx + o[1] * dy)
        c = o[0] ** 2 + o[1] ** 2 - self.radius**2
        disc = b * b - 4 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = (-b - np.sqrt(disc)) / (2 * a)
        zs = o[2] + ts * dz
        side = np.where((a > EPS) & (disc >= 0) & (ts > EPS) & (np.abs(zs) <= self.half_height), ts, np.inf)
        best = side
        for zc in (self.half_height, -self.half_height):
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = (zc - o[2]) / dz
            xc = o[0] + tc * dx
            yc = o[1] + tc * dy
            cap = np.where((np.abs(dz) > EPS) & (tc > EPS) & (xc * xc + yc * yc <= self.radius**2), tc, np.inf)
            best = np.minimum(best, cap)
        return best

    @property
    def footprint(self) -> float:
        return self.radius

    def corners(self) -> np.ndarray:
        return _aabb_corners(np.asarray(self.center), np.array([self.radius, self.radius, self.half_height]))

    def describe(self) -> dict:
        return {"kind": self.kind, "center": [float(v) for v in self.center],
                "radius": float(self.radius), "half_height": float(self.half_height)}


def _aabb_corners(center: np.ndarray, half: np.ndarray) -> np.ndarray:
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    return center + signs * half


# camera -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; ``rotation`` maps camera-frame vectors into the world."""

    intrinsics: CameraIntrinsics
    rotation: np.ndarray
    position: np.ndarray

    @classmethod
    def look_at(cls, intrinsics: CameraIntrinsics, position, target, roll_deg: float = 0.0) -> "Camera":
        pos = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        if np.linalg.norm(right) < 1e-9:
            right = np.array([1.0, 0.0, 0.0])  # looking straight down
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        a = math.radians(roll_deg)
        r2 = math.cos(a) * right + math.sin(a) * down
        d2 = -math.sin(a) * right + math.cos(a) * down
        return cls(intrinsics, np.column_stack([r2, d2, fwd]), pos)

    def world_rays(self, rows=None, cols=None) -> np.ndarray:
        """World-frame ray directions whose camera z-component is 1."""
        grid = self.intrinsics.ray_grid()
        if rows is not None:
            grid = grid[rows, cols]
        return grid.reshape(-1, 3) @ self.rotation.T

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation


def render_depth(surfaces, camera: Camera, rows=None, cols=None):
    """Nearest hit among ``surfaces`` per pixel.

    Returns ``(depth, index)``: z-depth (0 where no surface is hit) and the
    position of the hit surface in ``surfaces`` (-1 for none). Without
    ``rows``/``cols`` the full frame is rendered as (H, W) arrays.
    """
    dirs = camera.world_rays(rows, cols)
    best = np.full(len(dirs), np.inf)
    index = np.full(len(dirs), -1, dtype=np.int64)
    for k, s in enumerate(surfaces):
        t = s.intersect(camera.position, dirs)
        closer = t < best
        best[closer] = t[closer]
        index[closer] = k
    depth = np.where(np.isfinite(best), best, 0.0)
    if rows is None:
        shape = (camera.intrinsics.height, camera.intrinsics.width)
        return depth.reshape(shape), index.reshape(shape)
    return depth, index


# scenes -------------------------------------------------------------------

@dataclass(frozen=True)
class SceneConfig:
    width: int = 640
    height: int = 480
    vertical_fov: float = 45.0
    table_height_range: tuple = (0.75, 1.0)
    table_length_range: tuple = (1.0, 2.0)
    table_width_range: tuple = (0.8, 1.2)
    camera_height_range: tuple = (0.5, 1.2)  # above the table top
    camera_distance_range: tuple = (0.3, 0.9)  # horizontal, from the look-at point
    camera_tilt_range: tuple = (-12.0, 12.0)  # roll about the optical axis, degrees
    object_count_range: tuple = (5, 25)
    primitives: tuple = ("box", "sphere", "cylinder")
    min_object_size: float = 0.06
    min_visible_pixels: int | None = None  # None: 500 px scaled to the image area
    attempts_per_object: int = 40
    close_pairs: int = 0
    close_pair_size_range: tuple = (0.04, 0.055)
    close_pair_gap_range: tuple = (0.0, 0.004)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("table_height_range", "table_length_range", "table_width_range",
                     "camera_height_range", "camera_distance_range", "camera_tilt_range",
                     "object_count_range", "close_pair_size_range", "close_pair_gap_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not ordered: {lo} > {hi}")
        if self.object_count_range[0] < 1 and self.close_pairs == 0:
            raise ValueError("object_count_range must allow at least one object")
        if self.object_count_range[0] < 0:
            raise ValueError("object counts must be nonnegative")
        if not self.primitives or set(self.primitives) - {"box", "sphere", "cylinder"}:
            raise ValueError(f"unknown primitive set {self.primitives}")
        if self.width < 8 or self.height < 8:
            raise ValueError("image too small")

    @property
    def visible_pixel_floor(self) -> int:
        if self.min_visible_pixels is None:
            return scaled_pixel_count(self.height, self.width)
        return int(self.min_visible_pixels)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_vertical_fov(self.width, self.height, self.vertical_fov)


def _uniform(rng, lo_hi) -> float:
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _random_primitive(rng, kind: str, x: float, y: float, table_z: float, size_lo: float, size_hi: float):
    if kind == "sphere":
        r = _uniform(rng, (size_lo, size_hi)) / 2
        return Sphere((x, y, table_z + r), r)
    if kind == "cylinder":
        r = _uniform(rng, (size_lo, size_hi)) / 2
        hh = _uniform(rng, (size_lo, size_hi)) / 2
        return Cylinder((x, y, table_z + hh), r, hh)
    half = tuple(_uniform(rng, (size_lo, size_hi)) / 2 for _ in range(3))
    return Box((x, y, table_z + half[2]), half, float(rng.uniform(0, math.pi)))


def _moved(prim, x: float, y: float):
    c = prim.center
    return replace(prim, center=(x, y, c[2]))


class _Placer:
    """Incremental placement with footprint and image-overlap rejection."""

    def __init__(self, camera: Camera, table: TableTop, min_pixels: int):
        self.camera = camera
        self.table = table
        self.min_pixels = min_pixels
        self.prims: list = []
        self.masks: list = []  # (rows, cols) of each standalone silhouette
        h, w = camera.intrinsics.height, camera.intrinsics.width
        self.occupied = np.zeros((h, w), dtype=bool)

    def table_point(self, rng) -> tuple[float, float] | None:
        intr = self.camera.intrinsics
        r = rng.uniform(0.1, 0.9) * (intr.height - 1)
        c = rng.uniform(0.1, 0.9) * (intr.width - 1)
        ray = np.array([(c - intr.cx) / intr.fx, (r - intr.cy) / intr.fy, 1.0]) @ self.camera.rotation.T
        t = self.table.intersect(self.camera.position, ray[None, :])[0]
        if not np.isfinite(t):
            return None
        p = self.camera.position + t * ray
        return float(p[0]), float(p[1])

    def silhouette(self, prim):
        """Pixels hit by ``prim`` alone, or None if it leaves the frame."""
        intr = self.camera.intrinsics
        pc = self.camera.to_camera(prim.corners())
        if np.any(pc[:, 2] <= 0.05):
            return None
        px = project(pc, intr)
        r0, c0 = np.floor(px.min(axis=0)).astype(int) - 1
        r1, c1 = np.ceil(px.max(axis=0)).astype(int) + 1
        if r0 < 1 or c0 < 1 or r1 > intr.height - 2 or c1 > intr.width - 2:
            return None
        rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        rr, cc = rr.ravel(), cc.ravel()
        dirs = self.camera.world_rays(rr, cc)
        hit = np.isfinite(prim.intersect(self.camera.position, dirs))
        return rr[hit], cc[hit]

    def fits(self, prim, partner=None) -> tuple | None:
        """Silhouette of ``prim`` if it can be placed; ``partner`` may touch it."""
        x, y = prim.center[0], prim.center[1]
        if not self.table.contains(x, y, prim.footprint):
            return None
        for q in self.prims:
            if q is not partner and math.hypot(x - q.center[0], y - q.center[1]) < prim.footprint + q.footprint:
                return None
        sil = self.silhouette(prim)
        if sil is None or len(sil[0]) < self.min_pixels:
            return None
        if self.occupied[sil].any():
            return None  # would occlude or be occluded
        return sil

    def add(self, prim, sil) -> None:
        self.prims.append(prim)
        self.masks.append(sil)
        self.occupied[sil] = True

    def remove_last(self) -> None:
        self.prims.pop()
        self.occupied[self.masks.pop()] = False


def generate_scene(config: SceneConfig = SceneConfig(), seed: int | None = None) -> SceneSample:
    """Render one random tabletop scene.

    Objects rest on the table without touching each other's footprints and
    without overlapping in the image, so every instance mask is the full
    silhouette of its primitive. The number of objects is drawn from
    ``object_count_range``; if the attempt budget runs out the scene keeps
    the objects placed so far, and raises :class:`SceneError` only when that
    is fewer than the range minimum.
    """
    seed = config.rng_seed if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    intr = config.intrinsics()
    t_h = _uniform(rng, config.table_height_range)
    t_l = _uniform(rng, config.table_length_range)
    t_w = _uniform(rng, config.table_width_range)
    table = TableTop(t_h, t_l, t_w)
    target = np.array([rng.uniform(-0.25, 0.25) * t_l, rng.uniform(-0.25, 0.25) * t_w, t_h])
    az = rng.uniform(0, 2 * math.pi)
    dist = _uniform(rng, config.camera_distance_range)
    cam_h = _uniform(rng, config.camera_height_range)
    pos = target + np.array([dist * math.cos(az), dist * math.sin(az), cam_h])
    camera = Camera.look_at(intr, pos, target, _uniform(rng, config.camera_tilt_range))

    size_hi = 0.25 * min(t_h, t_l)
    placer = _Placer(camera, table, config.visible_pixel_floor)
    for _ in range(config.close_pairs):
        _place_close_pair(placer, rng, config, t_h)
    want = int(rng.integers(config.object_count_range[0], config.object_count_range[1] + 1))
    budget = config.attempts_per_object * max(want, 1)
    placed = 0
    while placed < want and budget > 0:
        budget -= 1
        xy = placer.table_point(rng)
        kind = config.primitives[int(rng.integers(len(config.primitives)))]
        prim = _random_primitive(rng, kind, 0.0, 0.0, t_h, config.min_object_size, size_hi)
        if xy is None:
            continue
        prim = _moved(prim, *xy)
        sil = placer.fits(prim)
        if sil is not None:
            placer.add(prim, sil)
            placed += 1
    if placed < config.object_count_range[0]:
        raise SceneError(f"seed {seed}: placed {placed} objects, need at least "
                         f"{config.object_count_range[0]}")
    return _assemble(camera, table, placer.prims, seed, rng)


def _place_close_pair(placer: _Placer, rng, config: SceneConfig, t_h: float) -> None:
    """Two small spheres almost touching, so their centers are closer than
    ``2 * radius + gap``."""
    for _ in range(config.attempts_per_object * 4):
        xy = placer.table_point(rng)
        r = _uniform(rng, config.close_pair_size_range) / 2
        gap = _uniform(rng, config.close_pair_gap_range)
        ang = rng.uniform(0, 2 * math.pi)
        if xy is None:
            continue
        off = (r + gap / 2) * np.array([math.cos(ang), math.sin(ang)])
        a = Sphere((xy[0] + off[0], xy[1] + off[1], t_h + r), r)
        b = Sphere((xy[0] - off[0], xy[1] - off[1], t_h + r), r)
        sa = placer.fits(a)
        if sa is None:
            continue
        placer.add(a, sa)
        sb = placer.fits(b, partner=a)
        if sb is None:
            placer.remove_last()
            continue
        placer.add(b, sb)
        return
    raise SceneError("could not place a close object pair")


_TABLE_RGB = np.array([150, 110, 70], dtype=np.uint8)
_FLOOR_RGB = np.array([90, 90, 95], dtype=np.uint8)


def _assemble(camera: Camera, table: TableTop, prims: list, seed: int, rng) -> SceneSample:
    intr = camera.intrinsics
    floor = Plane((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    depth, index = render_depth([floor, table, *prims], camera)
    labels = np.where(index <= 0, BACKGROUND, np.where(index == 1, TABLE, index))
    cloud = backproject(depth, intr)
    k = len(prims)
    centers2d = np.zeros((k, 2))
    centers3d = np.zeros((k, 3))
    for i, prim in enumerate(prims):
        rr, cc = np.nonzero(labels == i + FIRST_OBJECT)
        if len(rr) == 0:
            raise SceneError(f"seed {seed}: object {i} has no visible pixel")
        centers2d[i] = rr.mean(), cc.mean()
        centers3d[i] = fit_center_to_view(camera.to_camera(prim.center), intr)
    colors = rng.integers(40, 256, size=(k, 3)).astype(np.uint8)
    rgb = np.empty(labels.shape + (3,), dtype=np.uint8)
    rgb[labels == BACKGROUND] = _FLOOR_RGB
    rgb[labels == TABLE] = _TABLE_RGB
    for i in range(k):
        rgb[labels == i + FIRST_OBJECT] = colors[i]
    return SceneSample(cloud=cloud, gt_labels=labels, centers2d=centers2d, centers3d=centers3d,
                       intrinsics=intr, rng_seed=seed, depth=depth.astype(np.float32),
                       rgb=rgb, primitives=list(prims))


def fit_center_to_view(center: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Clamp a camera-frame point's projection into the image, keeping its depth."""
    c = np.asarray(center, dtype=np.float64)
    px = project(c, intrinsics)
    clamped = np.array([np.clip(px[0], 0, intrinsics.height - 1), np.clip(px[1], 0, intrinsics.width - 1)])
    if np.array_equal(clamped, px):
        return c
    return lift(clamped, c[2], intrinsics)


# ground-truth fields ----------------------------------------------------------

def gt_direction_field(sample: SceneSample) -> np.ndarray:
    """Unit 2D vectors ``(x, y)`` from each object pixel to its mask center;
    ``(0, 1)`` on background, table and exactly-centered pixels."""
    labels = sample.gt_labels
    h, w = labels.shape
    out = np.zeros((h, w, 2))
    out[..., 1] = 1.0
    rr, cc = np.nonzero(labels >= FIRST_OBJECT)
    k = labels[rr, cc] - FIRST_OBJECT
    dx = sample.centers2d[k, 1] - cc
    dy = sample.centers2d[k, 0] - rr
    n = np.hypot(dx, dy)
    ok = n > 0
    out[rr[ok], cc[ok], 0] = dx[ok] / n[ok]
    out[rr[ok], cc[ok], 1] = dy[ok] / n[ok]
    return out


def gt_offset_field(sample: SceneSample) -> np.ndarray:
    """3D offsets from each object pixel to its instance center; zero elsewhere."""
    labels = sample.gt_labels
    out = np.zeros(labels.shape + (3,))
    rr, cc = np.nonzero(labels >= FIRST_OBJECT)
    k = labels[rr, cc] - FIRST_OBJECT
    out[rr, cc] = sample.centers3d[k] - sample.cloud.xyz[rr, cc]
    return out


def gt_probs(sample: SceneSample) -> np.ndarray:
    """One-hot semantic probabilities (background, table, object)."""
    return np.eye(3)[semantic_classes(sample.gt_labels)]


# noise --------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    gamma_shape: float = 1000.0
    gamma_scale: float = 0.001
    gp_grid: int = 8
    gp_sigma: float = 0.002
    dir_angle_sigma: float = 0.0  # degrees
    offset_sigma: float = 0.0  # meters
    fg_flip_rate: float = 0.0

    def __post_init__(self):
        if self.gamma_shape <= 0 or self.gamma_scale <= 0:
            raise ValueError("gamma parameters must be positive")
        if abs(self.gamma_shape * self.gamma_scale - 1.0) > 1e-6:
            raise ValueError("gamma noise must have mean shape * scale = 1")
        if min(self.gp_sigma, self.dir_angle_sigma, self.offset_sigma) < 0:
            raise ValueError("noise scales must be >= 0")
        if self.gp_grid < 2:
            raise ValueError("gp_grid must be >= 2")
        if not 0 <= self.fg_flip_rate <= 1:
            raise ValueError("fg_flip_rate must be in [0, 1]")


@dataclass(frozen=True, eq=False)
class Observation:
    """What the post-processing consumes: a cloud and per-pixel predictions."""

    cloud: OrganizedCloud
    probs: np.ndarray
    dirs: np.ndarray
    offsets: np.ndarray
    depth: np.ndarray | None = None


def ideal_observation(sample: SceneSample) -> Observation:
    return Observation(sample.cloud, gt_probs(sample), gt_direction_field(sample),
                       gt_offset_field(sample), sample.depth)


def smooth_noise(height: int, width: int, grid: int, sigma: float, rng, channels: int = 3) -> np.ndarray:
    """Bilinear upsampling of a ``grid x grid`` field of iid N(0, sigma^2)."""
    coarse = rng.normal(0.0, sigma, size=(grid, grid, channels)) if sigma > 0 else np.zeros((grid, grid, channels))
    gy = np.linspace(0, grid - 1, height)
    gx = np.linspace(0, grid - 1, width)
    y0 = np.minimum(gy.astype(int), grid - 2)
    x0 = np.minimum(gx.astype(int), grid - 2)
    fy = (gy - y0)[:, None, None]
    fx = (gx - x0)[None, :, None]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    return (1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)


def apply_noise(sample: SceneSample, fields: Observation | None = None,
                noise: NoiseConfig = NoiseConfig(), seed: int = 0) -> Observation:
    """Corrupt the depth and the ideal fields.

    Depth is multiplied by iid Gamma noise with mean 1 and the backprojected
    cloud gets a smooth additive field. The network is assumed to see the
    noisy cloud, so offsets are re-targeted: ``noisy cloud + offsets`` equals
    the ideal center votes plus iid Gaussian noise of scale
    ``offset_sigma``. Directions are rotated by Gaussian angles; semantic
    probabilities flip to a random class at rate ``fg_flip_rate``.
    """
    fields = ideal_observation(sample) if fields is None else fields
    rng = np.random.default_rng(seed)
    h, w = sample.shape
    # the cloud's z is the depth map at full precision (the stored map is float32)
    depth = np.where(sample.cloud.valid, sample.cloud.xyz[..., 2], 0.0)
    depth = depth * rng.gamma(noise.gamma_shape, noise.gamma_scale, size=depth.shape)
    cloud = backproject(depth, sample.intrinsics)
    xyz = cloud.xyz + smooth_noise(h, w, noise.gp_grid, noise.gp_sigma, rng) * cloud.valid[..., None]
    cloud = OrganizedCloud(xyz, cloud.valid)

    votes = np.asarray(fields.cloud.xyz) + np.asarray(fields.offsets)
    offsets = votes - xyz
    if noise.offset_sigma > 0:
        offsets = offsets + rng.normal(0.0, noise.offset_sigma, size=offsets.shape)

    dirs = np.asarray(fields.dirs, dtype=np.float64)
    if noise.dir_angle_sigma > 0:
        ang = np.radians(rng.normal(0.0, noise.dir_angle_sigma, size=(h, w)))
        c, s = np.cos(ang), np.sin(ang)
        dirs = np.stack([c * dirs[..., 0] - s * dirs[..., 1], s * dirs[..., 0] + c * dirs[..., 1]], axis=-1)
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)

    probs = np.asarray(fields.probs, dtype=np.float64).copy()
    if noise.fg_flip_rate > 0:
        flip = rng.random((h, w)) < noise.fg_flip_rate
        cls = rng.integers(0, probs.shape[-1], size=(h, w))
        probs[flip] = np.eye(probs.shape[-1])[cls[flip]]
    probs /= probs.sum(axis=-1, keepdims=True)
    return Observation(cloud, probs, dirs, offsets, depth.astype(np.float32))
