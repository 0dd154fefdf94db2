"""Domain types, the pinhole camera model and point-cloud backprojection.

Conventions used throughout the package:

* Images are row-major ``(H, W, ...)`` arrays. Pixel ``(r, c)`` has its
  center at row ``r``, column ``c``.
* The camera frame is ``+x`` right, ``+y`` down, ``+z`` forward (meters).
* 2D direction vectors are stored as ``(x, y) = (d_col, d_row)``.
* Label maps use 0 for background, 1 for the table and ``k + 2`` for the
  k-th object instance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BACKGROUND = 0
TABLE = 1
FIRST_OBJECT = 2
NUM_CLASSES = 3  # background, table, object


class ShapeError(ValueError):
    """Array dimensions do not match what the container or op expects."""


def _check_hw(arr: np.ndarray, height: int, width: int, name: str) -> None:
    if arr.shape[:2] != (height, width):
        raise ShapeError(f"{name} has shape {arr.shape}, expected ({height}, {width}, ...)")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_vertical_fov(cls, width: int, height: int, vfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with the principal point at the image center."""
        fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
        return cls(fx=fy, fy=fy, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                   width=int(width), height=int(height))

    def as_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    def ray_grid(self) -> np.ndarray:
        """Per-pixel ray directions ``((c - cx)/fx, (r - cy)/fy, 1)``, shape (H, W, 3)."""
        cols = (np.arange(self.width, dtype=np.float64) - self.cx) / self.fx
        rows = (np.arange(self.height, dtype=np.float64) - self.cy) / self.fy
        rays = np.empty((self.height, self.width, 3))
        rays[..., 0] = cols[None, :]
        rays[..., 1] = rows[:, None]
        rays[..., 2] = 1.0
        return rays


@dataclass(frozen=True, eq=False)
class OrganizedCloud:
    """Per-pixel XYZ in the camera frame. Invalid pixels carry ``z = 0``."""

    xyz: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if xyz.ndim != 3 or xyz.shape[2] != 3:
            raise ShapeError(f"xyz must be (H, W, 3), got {xyz.shape}")
        _check_hw(valid, xyz.shape[0], xyz.shape[1], "valid")
        if valid.ndim != 2:
            raise ShapeError("valid must be (H, W)")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.xyz.shape[0]

    @property
    def width(self) -> int:
        return self.xyz.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.xyz, dtype=dtype)


@dataclass(frozen=True, eq=False)
class SemanticProbs:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != NUM_CLASSES:
            raise ShapeError(f"probs must be (H, W, {NUM_CLASSES}), got {p.shape}")
        if np.any(p < 0) or not np.allclose(p.sum(axis=2), 1.0, atol=1e-5):
            raise ValueError("per-pixel probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True, eq=False)
class DirectionField:
    dirs: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dirs, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 2:
            raise ShapeError(f"dirs must be (H, W, 2), got {d.shape}")
        object.__setattr__(self, "dirs", d)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.dirs, dtype=dtype)


@dataclass(frozen=True, eq=False)
class OffsetField:
    offsets: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.offsets, dtype=np.float64)
        if o.ndim != 3 or o.shape[2] != 3:
            raise ShapeError(f"offsets must be (H, W, 3), got {o.shape}")
        if not np.all(np.isfinite(o)):
            raise ValueError("offsets must be finite")
        object.__setattr__(self, "offsets", o)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.offsets, dtype=dtype)


@dataclass(frozen=True, eq=False)
class InstanceLabelMap:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ShapeError(f"labels must be (H, W), got {lab.shape}")
        if lab.size and lab.min() < 0:
            raise ValueError("labels must be nonnegative")
        object.__setattr__(self, "labels", lab.astype(np.int64, copy=False))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.labels, dtype=dtype)

    @property
    def num_instances(self) -> int:
        return len(object_ids(self.labels))


@dataclass(frozen=True, eq=False)
class SceneSample:
    cloud: OrganizedCloud
    gt_labels: np.ndarray
    centers2d: np.ndarray  # (K, 2) row, col
    centers3d: np.ndarray  # (K, 3) camera frame
    intrinsics: CameraIntrinsics
    rng_seed: int
    depth: np.ndarray | None = None
    rgb: np.ndarray | None = None
    primitives: list = field(default_factory=list)

    def __post_init__(self):
        labels = np.asarray(self.gt_labels).astype(np.int64, copy=False)
        _check_hw(labels, self.cloud.height, self.cloud.width, "gt_labels")
        c2 = np.asarray(self.centers2d, dtype=np.float64).reshape(-1, 2)
        c3 = np.asarray(self.centers3d, dtype=np.float64).reshape(-1, 3)
        if len(c2) != len(c3):
            raise ShapeError("centers2d and centers3d disagree on instance count")
        if (self.intrinsics.height, self.intrinsics.width) != labels.shape:
            raise ShapeError("intrinsics do not match image size")
        object.__setattr__(self, "gt_labels", labels)
        object.__setattr__(self, "centers2d", c2)
        object.__setattr__(self, "centers3d", c3)

    @property
    def num_objects(self) -> int:
        return len(self.centers2d)

    @property
    def shape(self) -> tuple[int, int]:
        return self.gt_labels.shape


def backproject(depth: np.ndarray, intrinsics: CameraIntrinsics) -> OrganizedCloud:
    """Lift a z-depth map to an organized cloud; zero depth marks invalid pixels."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise ShapeError(f"depth shape {depth.shape} does not match intrinsics "
                         f"({intrinsics.height}, {intrinsics.width})")
    if np.any(depth < 0):
        raise ValueError("depth must be nonnegative")
    xyz = intrinsics.ray_grid() * depth[..., None]
    return OrganizedCloud(xyz=xyz, valid=depth > 0)


def project(points: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points ``(..., 3)`` to ``(..., 2)`` pixel ``(row, col)``."""
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    out = np.empty(p.shape[:-1] + (2,))
    with np.errstate(divide="ignore", invalid="ignore"):
        out[..., 0] = intrinsics.fy * p[..., 1] / z + intrinsics.cy
        out[..., 1] = intrinsics.fx * p[..., 0] / z + intrinsics.cx
    return out


def lift(pixels: np.ndarray, z: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Inverse of :func:`project` at the given z-depth."""
    px = np.asarray(pixels, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    out = np.empty(px.shape[:-1] + (3,))
    out[..., 0] = (px[..., 1] - intrinsics.cx) / intrinsics.fx * z
    out[..., 1] = (px[..., 0] - intrinsics.cy) / intrinsics.fy * z
    out[..., 2] = z
    return out


def semantic_classes(labels: np.ndarray) -> np.ndarray:
    """Collapse an instance map to classes 0 (background), 1 (table), 2 (object)."""
    return np.minimum(np.asarray(labels), FIRST_OBJECT).astype(np.int64)


def object_ids(labels: np.ndarray) -> np.ndarray:
    """Sorted object label values (>= 2) present in ``labels``."""
    u = np.unique(np.asarray(labels))
    return u[u >= FIRST_OBJECT]


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber object labels to 2..K+1 keeping their relative order."""
    labels = np.asarray(labels, dtype=np.int64)
    ids = object_ids(labels)
    out = labels.copy()
    for new, old in enumerate(ids, start=FIRST_OBJECT):
        out[labels == old] = new
    return out


def foreground_from_probs(probs: np.ndarray) -> np.ndarray:
    """Pixels whose argmax class is ``object``."""
    return np.argmax(np.asarray(probs), axis=-1) == FIRST_OBJECT
