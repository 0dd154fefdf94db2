"""Finite-difference verification of every loss on random small instances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FIRST_OBJECT
from .losses import (LossWeights, center_offset_loss, cluster_loss, direction_loss,
                     finite_difference_check, foreground_loss, sample_seed_index,
                     separation_loss, total_loss_2d, total_loss_3d)

LOSS_NAMES = ("fg", "dir", "co", "cl", "sep", "total3d", "total2d")
TOLERANCE = 1e-4


@dataclass
class RandomCase:
    labels: np.ndarray
    probs: np.ndarray
    dirs: np.ndarray
    gt_dirs: np.ndarray
    cloud: np.ndarray
    offsets: np.ndarray
    centers: np.ndarray


def _unit(rng, shape):
    v = rng.normal(size=shape + (2,))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_case(rng: np.random.Generator, height: int = 8, width: int = 8,
                max_objects: int = 3) -> RandomCase:
    """Random labels with background, table and 1..max_objects instances,
    plus random predictions around them."""
    k = int(rng.integers(1, max_objects + 1))
    labels = rng.integers(0, k + FIRST_OBJECT, size=(height, width))
    labels.flat[: k + FIRST_OBJECT] = np.arange(k + FIRST_OBJECT)  # every label present
    labels = rng.permutation(labels.ravel()).reshape(height, width)
    probs = rng.uniform(0.05, 1.0, size=(height, width, 3))
    probs /= probs.sum(axis=2, keepdims=True)
    centers = rng.normal(0.0, 0.05, size=(k, 3)) + np.array([0.0, 0.0, 1.0])
    cloud = rng.normal(0.0, 0.05, size=(height, width, 3)) + np.array([0.0, 0.0, 1.0])
    obj = labels >= FIRST_OBJECT
    # offsets land near the own center, some far enough to leave the Huber quadratic zone
    target = np.where(obj[..., None], centers[np.maximum(labels - FIRST_OBJECT, 0)], cloud)
    offsets = target - cloud + rng.normal(0.0, 0.03, size=cloud.shape)
    return RandomCase(labels, probs, _unit(rng, (height, width)), _unit(rng, (height, width)),
                      cloud, offsets, centers)


def check_case(case: RandomCase, weights: LossWeights, rng: np.random.Generator,
               eps: float = 1e-6, huber_delta: float = 0.05) -> dict:
    """Max relative error per loss for one case (kink coordinates excluded)."""
    lab = case.labels
    n_obj = int((lab >= FIRST_OBJECT).sum())
    seeds = sample_seed_index(n_obj, weights.cluster_seeds, rng)
    shape = case.offsets.shape
    out = {}

    def fd(name, fn, x, value_fn=None):
        out[name] = finite_difference_check(fn, x, eps=eps, value_fn=value_fn)

    fd("fg", lambda p: foreground_loss(p, lab), case.probs)
    fd("dir", lambda v: direction_loss(v, case.gt_dirs, lab, weights.bt), case.dirs)
    fd("co", lambda o: center_offset_loss(case.cloud, o, case.centers, lab, huber_delta), case.offsets)
    fd("cl", lambda o: cluster_loss(case.cloud, o, lab, weights, seed_index=seeds), case.offsets,
       lambda o: cluster_loss(case.cloud, o, lab, weights, seed_index=seeds, with_grad=False).value)
    fd("sep", lambda o: separation_loss(case.cloud, o, case.centers, lab, weights.tau), case.offsets)

    n_p = case.probs.size

    def t3(flat, with_grad=True):
        p = flat[:n_p].reshape(case.probs.shape)
        o = flat[n_p:].reshape(shape)
        tl = total_loss_3d(p, case.cloud, o, case.centers, lab, weights, seed_index=seeds,
                           with_grad=with_grad)
        return tl.value, np.concatenate([g.ravel() for g in tl.grad])

    fd("total3d", t3, np.concatenate([case.probs.ravel(), case.offsets.ravel()]),
       lambda flat: t3(flat, with_grad=False)[0])

    def t2(flat):
        p = flat[:n_p].reshape(case.probs.shape)
        v = flat[n_p:].reshape(case.dirs.shape)
        tl = total_loss_2d(p, v, case.gt_dirs, lab, weights.bt)
        return tl.value, np.concatenate([g.ravel() for g in tl.grad])

    fd("total2d", t2, np.concatenate([case.probs.ravel(), case.dirs.ravel()]))
    return out


def run_gradient_suite(cases: int = 20, seed: int = 0, size: int = 8,
                       weights: LossWeights = LossWeights()) -> dict:
    """Worst relative error, total kinks and non-finite counts per loss."""
    rng = np.random.default_rng(seed)
    summary = {name: {"max_rel_error": 0.0, "kinks": 0, "nonfinite": 0, "checked": 0}
               for name in LOSS_NAMES}
    for _ in range(cases):
        case = random_case(rng, size, size)
        for name, res in check_case(case, weights, rng).items():
            s = summary[name]
            s["max_rel_error"] = max(s["max_rel_error"], res.max_rel_error)
            s["kinks"] += int(res.kinks.size)
            s["nonfinite"] += int(res.nonfinite.size)
            s["checked"] += res.checked
    return summary


def suite_passes(summary: dict, tol: float = TOLERANCE) -> bool:
    return all(s["max_rel_error"] < tol and s["nonfinite"] == 0 for s in summary.values())
