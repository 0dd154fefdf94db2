"""Tensor files, PGM label maps and scene bundles.

UOTF layout (little-endian)::

    0   4s   magic b"UOTF"
    4   u8   version (1)
    5   u8   dtype code: 1=f32, 2=u16, 3=u8
    6   2x   reserved, zero
    8   u32  ndim
    12  ndim*u32 dims
    ..  row-major payload
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .core import CameraIntrinsics, OrganizedCloud, SceneSample

MAGIC = b"UOTF"
VERSION = 1
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<u2"), 3: np.dtype("u1")}
_CODE_OF = {"float32": 1, "uint16": 2, "uint8": 3}
HEADER_FIXED = 12


class TensorFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def tensor_bytes(tensor: np.ndarray) -> bytes:
    arr = np.asarray(tensor)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    code = _CODE_OF.get(arr.dtype.name)
    if code is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; use float32, uint16 or uint8", 5)
    header = MAGIC + struct.pack("<BBxxI", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()
    return header + payload


def save_tensor(path, tensor: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(tensor))


def parse_tensor(buf: bytes, dtype=None) -> np.ndarray:
    if len(buf) < HEADER_FIXED:
        raise TensorFormatError("truncated header", len(buf))
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {buf[:4]!r}", 0)
    version, code, ndim = struct.unpack_from("<BBxxI", buf, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", 4)
    if code not in _CODES:
        raise TensorFormatError(f"unknown dtype code {code}", 5)
    if buf[6:8] != b"\x00\x00":
        raise TensorFormatError("reserved bytes must be zero", 6)
    dims_end = HEADER_FIXED + 4 * ndim
    if len(buf) < dims_end:
        raise TensorFormatError("truncated dimension list", len(buf))
    shape = struct.unpack_from(f"<{ndim}I", buf, HEADER_FIXED)
    dt = _CODES[code]
    if dtype is not None and np.dtype(dtype).name != dt.name:
        raise TensorFormatError(f"dtype mismatch: file holds {dt}, expected {np.dtype(dtype)}", 5)
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) < dims_end + nbytes:
        raise TensorFormatError(f"truncated payload: need {nbytes} bytes", len(buf))
    if len(buf) > dims_end + nbytes:
        raise TensorFormatError("trailing bytes after payload", dims_end + nbytes)
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=dims_end)
    return arr.reshape(shape).astype(dt.newbyteorder("="))


def load_tensor(path, dtype=None) -> np.ndarray:
    return parse_tensor(Path(path).read_bytes(), dtype=dtype)


def write_pgm(path, labels: np.ndarray) -> None:
    """Binary PGM with maxval 65535 (big-endian samples)."""
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ValueError("PGM needs a 2D label map")
    if lab.size and (lab.min() < 0 or lab.max() > 65535):
        raise ValueError("labels out of u16 range")
    h, w = lab.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + lab.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM: {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    dt = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    count = w * h
    if len(data) - pos < count * dt.itemsize:
        raise ValueError("truncated PGM payload")
    arr = np.frombuffer(data, dtype=dt, count=count, offset=pos)
    return arr.reshape(h, w).astype(np.uint16)


# scene bundles -------------------------------------------------------------

BUNDLE_FORMAT = "tabletop-scene/1"


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_scene(sample: SceneSample, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {"cloud": "cloud.uotf", "valid": "valid.uotf", "labels": "labels.uotf",
             "labels_pgm": "labels.pgm"}
    save_tensor(d / files["cloud"], sample.cloud.xyz.astype(np.float32))
    save_tensor(d / files["valid"], sample.cloud.valid.astype(np.uint8))
    save_tensor(d / files["labels"], sample.gt_labels.astype(np.uint16))
    write_pgm(d / files["labels_pgm"], sample.gt_labels)
    if sample.depth is not None:
        files["depth"] = "depth.uotf"
        save_tensor(d / files["depth"], np.asarray(sample.depth, dtype=np.float32))
    if sample.rgb is not None:
        files["rgb"] = "rgb.uotf"
        save_tensor(d / files["rgb"], np.asarray(sample.rgb, dtype=np.uint8))
    instances = []
    for k in range(sample.num_objects):
        inst = {"label": k + 2,
                "center2d": [float(v) for v in sample.centers2d[k]],
                "center3d": [float(v) for v in sample.centers3d[k]]}
        if k < len(sample.primitives):
            inst["primitive"] = sample.primitives[k].describe()
        instances.append(inst)
    manifest = {"format": BUNDLE_FORMAT, "seed": int(sample.rng_seed),
                "height": sample.shape[0], "width": sample.shape[1],
                "intrinsics": sample.intrinsics.as_dict(),
                "instances": instances, "files": files}
    _write_json(d / "manifest.json", manifest)
    return d


def load_scene(directory) -> SceneSample:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"{d}: unreadable manifest: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{d}: unknown bundle format {manifest.get('format')!r}")
    files = manifest["files"]
    intr = CameraIntrinsics(**manifest["intrinsics"])
    xyz = load_tensor(d / files["cloud"], np.float32).astype(np.float64)
    valid = load_tensor(d / files["valid"], np.uint8).astype(bool)
    labels = load_tensor(d / files["labels"], np.uint16).astype(np.int64)
    depth = load_tensor(d / files["depth"], np.float32) if "depth" in files else None
    rgb = load_tensor(d / files["rgb"], np.uint8) if "rgb" in files else None
    inst = sorted(manifest["instances"], key=lambda i: i["label"])
    return SceneSample(
        cloud=OrganizedCloud(xyz, valid), gt_labels=labels,
        centers2d=np.array([i["center2d"] for i in inst], dtype=np.float64).reshape(-1, 2),
        centers3d=np.array([i["center3d"] for i in inst], dtype=np.float64).reshape(-1, 3),
        intrinsics=intr, rng_seed=int(manifest["seed"]), depth=depth, rgb=rgb)


def is_scene_dir(path) -> bool:
    return os.path.isfile(os.path.join(path, "manifest.json"))
