"""Batch segmentation over scene bundles and the flat text configuration
that drives it.

The configuration format is one ``key = value`` pair per line with dotted
namespaces, for example::

    mode = vote3d
    gms.sigma = 0.02
    imp.open_kernel = 1
    noise.enabled = true
    noise.dir_angle_sigma = 5.0

Values are Python literals (numbers, tuples, ``None``, quoted strings);
anything else is taken as a bare string, and ``true``/``false`` are booleans.
``#`` starts a comment.
"""
from __future__ import annotations

import ast
import csv
import dataclasses
import hashlib
import io as _io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FIRST_OBJECT, TABLE, foreground_from_probs
from .imp import MorphParams, process_masks
from .io import is_scene_dir, load_scene, load_tensor, write_pgm
from .metrics import default_slack, evaluate, mean_report
from .scenegen import NoiseConfig, Observation, SceneConfig, apply_noise, ideal_observation
from .voting2d import HoughParams, segment_2d
from .voting3d import GmsParams, cluster_votes

MODES = ("vote2d", "vote3d")
PREDICTION_FILES = {"probs": "pred_probs.uotf", "dirs": "pred_dirs.uotf", "offsets": "pred_offsets.uotf"}
# full-resolution frame the pixel-count defaults refer to
REFERENCE_SHAPE = (480, 640)


class ConfigError(ValueError):
    pass


def parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str) -> dict:
    """Dotted key -> parsed value. Repeated keys are an error."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load_config_file(path) -> dict:
    try:
        return parse_config_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def split_sections(flat: dict) -> dict:
    """``{"gms.sigma": 0.1, "mode": "x"}`` -> ``{"gms": {"sigma": 0.1}, "": {"mode": "x"}}``."""
    out: dict = {}
    for key, value in flat.items():
        section, _, name = key.rpartition(".")
        out.setdefault(section, {})[name] = value
    return out


def build_params(cls, values: dict, section: str):
    """Instantiate a parameter dataclass, reporting unknown keys and invalid values."""
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(unknown)}")
    fixed = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} config: {exc}") from exc


def scene_config_from(flat: dict) -> SceneConfig:
    sections = split_sections(flat)
    return build_params(SceneConfig, sections.get("scene", {}), "scene")


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "vote3d"
    hough: HoughParams = HoughParams()
    gms: GmsParams = GmsParams()
    morph: MorphParams = MorphParams()
    slack: int | None = None  # None: scaled from the image diagonal
    objective: str = "f"
    noise: NoiseConfig | None = None  # None: clean fields
    seed: int = 0
    input_dir: str = ""
    output_dir: str = ""
    threads: int = 1
    scale_pixel_counts: bool = True  # rescale gms.min_cluster_pixels from 640x480

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.objective not in ("f", "iou"):
            raise ConfigError("metrics.objective must be 'f' or 'iou'")
        if self.threads < 1:
            raise ConfigError("pipeline.threads must be >= 1")
        if self.slack is not None and self.slack < 0:
            raise ConfigError("metrics.slack must be >= 0")

    @classmethod
    def from_flat(cls, flat: dict, **extra) -> "PipelineConfig":
        sections = split_sections(flat)
        top = dict(sections.pop("", {}))
        top.update(sections.pop("pipeline", {}))
        known_sections = {"hough", "gms", "imp", "metrics", "noise", "scene"}
        stray = sorted(set(sections) - known_sections)
        if stray:
            raise ConfigError(f"unknown config sections: {', '.join(stray)}")
        noise_vals = dict(sections.get("noise", {}))
        enabled = bool(noise_vals.pop("enabled", bool(noise_vals)))
        metrics = dict(sections.get("metrics", {}))
        kwargs = {
            "hough": build_params(HoughParams, sections.get("hough", {}), "hough"),
            "gms": build_params(GmsParams, sections.get("gms", {}), "gms"),
            "morph": build_params(MorphParams, sections.get("imp", {}), "imp"),
            "noise": build_params(NoiseConfig, noise_vals, "noise") if enabled else None,
            "slack": metrics.pop("slack", None),
            "objective": metrics.pop("objective", "f"),
        }
        if metrics:
            raise ConfigError(f"unknown metrics keys: {', '.join(sorted(metrics))}")
        renames = {"input": "input_dir", "output": "output_dir"}
        allowed = {"mode", "seed", "threads", "input_dir", "output_dir", "scale_pixel_counts"}
        for key, value in top.items():
            key = renames.get(key, key)
            if key not in allowed:
                raise ConfigError(f"unknown pipeline key {key!r}")
            kwargs[key] = value
        kwargs.update({k: v for k, v in extra.items() if v is not None})
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def canonical(self) -> dict:
        """Everything that affects results; paths and the worker count do not."""
        d = {"mode": self.mode, "hough": dataclasses.asdict(self.hough), "gms": dataclasses.asdict(self.gms),
             "imp": dataclasses.asdict(self.morph), "metrics": {"slack": self.slack, "objective": self.objective},
             "noise": None if self.noise is None else dataclasses.asdict(self.noise),
             "seed": self.seed, "scale_pixel_counts": self.scale_pixel_counts}
        return json.loads(json.dumps(d, sort_keys=True))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# single image -------------------------------------------------------------

def noise_seed(base: int, scene_seed: int) -> int:
    return int(np.random.SeedSequence([int(base), int(scene_seed)]).generate_state(1)[0])


def load_observation(scene_dir, sample, config: PipelineConfig) -> Observation:
    """Saved predictions when the bundle has them, else the ideal fields;
    then the configured noise."""
    d = Path(scene_dir)
    fields = ideal_observation(sample)
    present = {k: d / name for k, name in PREDICTION_FILES.items() if (d / name).exists()}
    if present:
        loaded = {k: load_tensor(p, np.float32).astype(np.float64) for k, p in present.items()}
        fields = Observation(fields.cloud, loaded.get("probs", fields.probs), loaded.get("dirs", fields.dirs),
                             loaded.get("offsets", fields.offsets), fields.depth)
    if config.noise is not None:
        fields = apply_noise(sample, fields, config.noise, seed=noise_seed(config.seed, sample.rng_seed))
    return fields


def gms_for_shape(params: GmsParams, shape, scale: bool) -> GmsParams:
    if not scale or tuple(shape) == REFERENCE_SHAPE:
        return params
    ref = REFERENCE_SHAPE[0] * REFERENCE_SHAPE[1]
    count = math.ceil(params.min_cluster_pixels * shape[0] * shape[1] / ref)
    return dataclasses.replace(params, min_cluster_pixels=count)


def segment_observation(obs: Observation, config: PipelineConfig) -> np.ndarray:
    """Vote, assemble, mark the table and clean the masks."""
    probs = np.asarray(obs.probs)
    fg = foreground_from_probs(probs) & obs.cloud.valid
    table = np.argmax(probs, axis=-1) == TABLE
    if config.mode == "vote2d":
        labels, _ = segment_2d(fg, obs.dirs, config.hough, table=table)
    else:
        gms = gms_for_shape(config.gms, fg.shape, config.scale_pixel_counts)
        labels, _ = cluster_votes(obs.cloud.xyz, obs.offsets, fg, gms)
        labels[(labels < FIRST_OBJECT) & table] = TABLE
    return process_masks(labels, config.morph)


def process_scene(scene_dir, config: PipelineConfig) -> dict:
    """Segment one bundle; returns the labels and, with ground truth, the scores."""
    sample = load_scene(scene_dir)
    obs = load_observation(scene_dir, sample, config)
    labels = segment_observation(obs, config)
    h, w = labels.shape
    slack = default_slack(h, w) if config.slack is None else config.slack
    report = evaluate(labels, sample.gt_labels, slack, config.objective)
    return {"labels": labels, "report": report}


def _worker(args):
    scene_dir, config = args
    try:
        return process_scene(scene_dir, config), None
    except Exception as exc:  # reported per image
        return None, f"{type(exc).__name__}: {exc}"


# batch ---------------------------------------------------------------------

def discover_scenes(root) -> list[Path]:
    root = Path(root)
    if is_scene_dir(root):
        return [root]
    if not root.is_dir():
        raise FileNotFoundError(f"input directory {root} does not exist")
    return sorted(p for p in root.iterdir() if p.is_dir() and is_scene_dir(p))


@dataclass
class PipelineResult:
    report: dict
    errors: dict  # scene name -> message

    @property
    def ok(self) -> bool:
        return not self.errors


def report_csv(report: dict) -> str:
    """One row per image plus the mean, columns in overlap/boundary P R F order."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "overlap_p", "overlap_r", "overlap_f", "boundary_p", "boundary_r", "boundary_f"])
    rows = [(img["name"], img) for img in report["images"]] + [("mean", report["mean"])]
    for name, r in rows:
        writer.writerow([name] + [f"{r[k][m]:.2f}" for k in ("overlap", "boundary") for m in "prf"])
    return buf.getvalue()


def build_report(names, reports, config_hash: str) -> dict:
    images = [{"name": n, **r.as_dict()} for n, r in zip(names, reports)]
    return {"images": images, "mean": mean_report(reports), "config_hash": config_hash}


def write_report(out_dir, report: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.csv").write_text(report_csv(report))


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Segment every bundle under ``config.input_dir``.

    Writes ``labels/<scene>.pgm``, ``report.json`` and ``report.csv`` under
    ``config.output_dir``. Output order follows the sorted scene names
    whatever the worker count.
    """
    scenes = discover_scenes(config.input_dir)
    out = Path(config.output_dir)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    jobs = [(s, config) for s in scenes]
    if config.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    names, reports, errors = [], [], {}
    for scene, (res, err) in zip(scenes, results):
        if err is not None:
            errors[scene.name] = err
            continue
        write_pgm(out / "labels" / f"{scene.name}.pgm", res["labels"])
        names.append(scene.name)
        reports.append(res["report"])
    report = build_report(names, reports, config.config_hash)
    if errors:
        report["errors"] = dict(sorted(errors.items()))
    write_report(out, report)
    return PipelineResult(report, errors)
