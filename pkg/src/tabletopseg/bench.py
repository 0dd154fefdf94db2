"""Timing of the voting pipelines on a full-size frame, numba against numpy."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._accel import HAVE_NUMBA
from .core import foreground_from_probs
from .imp import MorphParams, process_masks
from .scenegen import NoiseConfig, SceneConfig, apply_noise, generate_scene, ideal_observation
from .voting2d import HoughParams, hough_accumulate
from .voting3d import GmsParams, cluster_votes

TIME_LIMIT = 2.0  # seconds, vote3d at 640x480
FOREGROUND_RANGE = (45_000, 60_000)
BENCH_NOISE = NoiseConfig(dir_angle_sigma=5.0, offset_sigma=0.01)


@dataclass
class BenchFrame:
    seed: int
    cloud: np.ndarray
    offsets: np.ndarray
    dirs: np.ndarray
    foreground: np.ndarray

    @property
    def num_foreground(self) -> int:
        return int(self.foreground.sum())


def bench_frame(seed: int = 1, fg_range=FOREGROUND_RANGE, max_tries: int = 200) -> BenchFrame:
    """First scene from ``seed`` upward whose foreground count lies in
    ``fg_range``, with noisy fields."""
    config = SceneConfig()
    for s in range(seed, seed + max_tries):
        sample = generate_scene(config, s)
        n = int((sample.gt_labels >= 2).sum())
        if fg_range[0] <= n <= fg_range[1]:
            obs = apply_noise(sample, ideal_observation(sample), BENCH_NOISE, seed=s)
            fg = foreground_from_probs(obs.probs) & obs.cloud.valid
            return BenchFrame(s, obs.cloud.xyz, obs.offsets, obs.dirs, fg)
    raise RuntimeError(f"no scene in seeds {seed}..{seed + max_tries - 1} has {fg_range} foreground pixels")


def vote3d_pipeline(frame: BenchFrame, backend: str, gms: GmsParams = GmsParams(),
                    morph: MorphParams = MorphParams()) -> np.ndarray:
    labels, _ = cluster_votes(frame.cloud, frame.offsets, frame.foreground, gms, backend=backend)
    return process_masks(labels, morph)


def _best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run_benchmark(seed: int = 1, repeats: int = 3, backends=None) -> dict:
    """Best-of-``repeats`` wall time per backend; a warm-up run per backend
    keeps JIT compilation out of the numbers."""
    frame = bench_frame(seed)
    if backends is None:
        backends = ("numba", "numpy") if HAVE_NUMBA else ("numpy",)
    out = {"seed": frame.seed, "shape": list(frame.foreground.shape),
           "foreground_pixels": frame.num_foreground, "limit_s": TIME_LIMIT, "results": {}}
    hough = HoughParams()
    for b in backends:
        vote3d_pipeline(frame, b)
        hough_accumulate(frame.foreground, frame.dirs, hough, backend=b)
        out["results"][b] = {
            "vote3d_s": _best_of(lambda: vote3d_pipeline(frame, b), repeats),
            "hough_s": _best_of(lambda: hough_accumulate(frame.foreground, frame.dirs, hough, backend=b), repeats),
        }
    fastest = min(r["vote3d_s"] for r in out["results"].values())
    out["passed"] = fastest < TIME_LIMIT
    return out


def format_benchmark(result: dict) -> str:
    lines = [f"frame seed {result['seed']}  {result['shape'][1]}x{result['shape'][0]}  "
             f"foreground {result['foreground_pixels']} px",
             f"{'backend':<8} {'vote3d [s]':>11} {'hough [s]':>10}"]
    for name, r in result["results"].items():
        lines.append(f"{name:<8} {r['vote3d_s']:>11.3f} {r['hough_s']:>10.3f}")
    verdict = "PASS" if result["passed"] else "FAIL"
    lines.append(f"{verdict}: vote3d < {result['limit_s']:.1f} s")
    return "\n".join(lines)
