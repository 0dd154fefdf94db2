"""3D center-vote clustering with Gaussian mean shift (GMS)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit, resolve_backend
from .core import BACKGROUND, FIRST_OBJECT

CONVERGENCE_TOL = 1e-6  # meters, max seed displacement
# Kernel weights exp(-q) with q beyond this are below the smallest normal
# double and are flushed to zero in both backends; subnormal exp results take
# a slow path in libm and carry no usable precision anyway.
EXP_UNDERFLOW = 708.0


@dataclass(frozen=True)
class GmsParams:
    sigma: float = 0.02
    iterations: int = 10
    num_seeds: int = 200
    merge_radius: float | None = None  # defaults to 2 * sigma
    min_cluster_pixels: int = 500
    rng_seed: int = 0
    reseed_rounds: int = 3
    polish_iterations: int = 100  # extra steps for the merged modes only; 0 disables

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.iterations < 1 or self.num_seeds < 1:
            raise ValueError("iterations and num_seeds must be >= 1")
        if min(self.min_cluster_pixels, self.reseed_rounds, self.polish_iterations) < 0:
            raise ValueError("min_cluster_pixels, reseed_rounds and polish_iterations must be >= 0")

    @property
    def merge_distance(self) -> float:
        return 2.0 * self.sigma if self.merge_radius is None else float(self.merge_radius)


def kde_density(points: np.ndarray, votes: np.ndarray, sigma: float) -> np.ndarray:
    """Unnormalized KDE ``sum_j exp(-|z - x_j|^2 / sigma^2)`` at each point."""
    z = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x = np.asarray(votes, dtype=np.float64)
    d2 = ((z[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / sigma**2).sum(axis=1)


@njit
def _gms_step_numba(z, x, inv_s2):
    s = z.shape[0]
    n = x.shape[0]
    out = np.empty_like(z)
    stalled = np.zeros(s, np.bool_)
    for i in range(s):
        z0 = z[i, 0]
        z1 = z[i, 1]
        z2 = z[i, 2]
        wsum = 0.0
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for j in range(n):
            d0 = z0 - x[j, 0]
            d1 = z1 - x[j, 1]
            d2 = z2 - x[j, 2]
            q = (d0 * d0 + d1 * d1 + d2 * d2) * inv_s2
            if q > EXP_UNDERFLOW:
                continue
            w = math.exp(-q)
            wsum += w
            a0 += w * x[j, 0]
            a1 += w * x[j, 1]
            a2 += w * x[j, 2]
        if wsum > 0.0:
            out[i, 0] = a0 / wsum
            out[i, 1] = a1 / wsum
            out[i, 2] = a2 / wsum
        else:
            out[i, 0] = z0
            out[i, 1] = z1
            out[i, 2] = z2
            stalled[i] = True
    return out, stalled


def _gms_step_numpy(z, x, inv_s2, block=4096):
    s = z.shape[0]
    wsum = np.zeros(s)
    acc = np.zeros((s, 3))
    for j0 in range(0, x.shape[0], block):
        xb = x[j0:j0 + block]
        q = ((z[:, None, :] - xb[None, :, :]) ** 2).sum(-1) * inv_s2
        w = np.where(q > EXP_UNDERFLOW, 0.0, np.exp(-q))
        wsum += w.sum(axis=1)
        acc += w @ xb
    stalled = wsum == 0.0
    out = z.copy()
    ok = ~stalled
    out[ok] = acc[ok] / wsum[ok, None]
    return out, stalled


def gms_iterate(seeds: np.ndarray, votes: np.ndarray, sigma: float, backend: str | None = None,
                return_stalled: bool = False):
    """One GMS step: every seed moves to the kernel-weighted mean of the votes.

    Seeds whose kernel weights all underflow stay in place; with
    ``return_stalled=True`` their mask is returned alongside the new seeds.
    """
    z = np.ascontiguousarray(seeds, dtype=np.float64).reshape(-1, 3)
    x = np.ascontiguousarray(votes, dtype=np.float64).reshape(-1, 3)
    if len(x) == 0:
        raise ValueError("gms_iterate needs at least one vote")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    step = _gms_step_numba if resolve_backend(backend) == "numba" else _gms_step_numpy
    out, stalled = step(z, x, 1.0 / sigma**2)
    return (out, stalled) if return_stalled else out


def run_gms(seeds: np.ndarray, votes: np.ndarray, sigma: float, iterations: int,
            tol: float = CONVERGENCE_TOL, backend: str | None = None) -> np.ndarray:
    """Iterate GMS up to ``iterations`` times, stopping once seeds settle."""
    z = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
    for _ in range(iterations):
        nz = gms_iterate(z, votes, sigma, backend=backend)
        moved = np.abs(nz - z).max() if len(z) else 0.0
        z = nz
        if moved < tol:
            break
    return z


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # smaller root index stays the representative
            self.parent[max(ri, rj)] = min(ri, rj)


def merge_modes(points: np.ndarray, density: np.ndarray, radius: float) -> np.ndarray:
    """Union points closer than ``radius``; each group keeps its densest member.

    Groups are returned in order of their first member.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return pts
    uf = _UnionFind(n)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    ii, jj = np.nonzero(np.triu(d2 <= radius * radius, k=1))
    for i, j in zip(ii, jj):
        uf.union(int(i), int(j))
    roots = np.array([uf.find(i) for i in range(n)])
    modes = []
    for root in sorted(set(roots.tolist())):
        members = np.flatnonzero(roots == root)
        best = members[np.argmax(density[members])]  # first on ties
        modes.append(pts[best])
    return np.array(modes)


def nearest_mode(votes: np.ndarray, modes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest mode for every vote."""
    x = np.asarray(votes, dtype=np.float64)
    m = np.asarray(modes, dtype=np.float64)
    best = np.zeros(len(x), np.int64)
    bd = np.full(len(x), np.inf)
    for k in range(len(m)):
        d = ((x - m[k]) ** 2).sum(axis=1)
        closer = d < bd
        best[closer] = k
        bd[closer] = d[closer]
    return best, bd


def find_modes(votes: np.ndarray, params: GmsParams = GmsParams(), backend: str | None = None) -> np.ndarray:
    """Modes of the vote KDE reached from seeds sampled among the votes.

    ``num_seeds`` seeds are drawn uniformly without replacement, moved with up
    to ``iterations`` GMS steps and merged within ``merge_distance``. Votes
    left farther than ``merge_distance`` from every mode then seed further
    rounds (at most ``reseed_rounds``), so small clusters that drew no seed in
    the first round still get a mode. A vote seeds at most once, and the
    rounds stop as soon as one adds no mode. Finally the merged modes alone
    take up to ``polish_iterations`` further steps (stopping once settled)
    and are merged again. The mode count never exceeds ``num_seeds``.
    """
    x = np.asarray(votes, dtype=np.float64).reshape(-1, 3)
    if len(x) == 0:
        return np.zeros((0, 3))
    rng = np.random.default_rng(params.rng_seed)
    radius = params.merge_distance
    pool = np.arange(len(x))
    tried = np.zeros(len(x), dtype=bool)
    modes = np.zeros((0, 3))
    for rnd in range(params.reseed_rounds + 1):
        budget = params.num_seeds - len(modes)
        if budget <= 0 or len(pool) == 0:
            break
        take = min(budget, len(pool))
        idx = np.sort(rng.choice(pool, size=take, replace=False))
        tried[idx] = True
        z = run_gms(x[idx], x, params.sigma, params.iterations, backend=backend)
        cand = np.concatenate([modes, z])
        dens = kde_density_blocked(cand, x, params.sigma, backend=backend)
        # existing modes win ties against newcomers by order
        merged = merge_modes(cand, dens, radius)[: params.num_seeds]
        grew = len(merged) > len(modes)
        modes = merged
        if rnd > 0 and not grew:
            break
        _, bd = nearest_mode(x, modes)
        pool = np.flatnonzero((bd > radius * radius) & ~tried)
    if params.polish_iterations and len(modes):
        # a seed on a flat shoulder of the density can still be drifting after
        # the seed iterations; finish the few merged modes so each is a maximum
        modes = run_gms(modes, x, params.sigma, params.polish_iterations, backend=backend)
        modes = merge_modes(modes, kde_density_blocked(modes, x, params.sigma, backend=backend), radius)
    return modes


@njit
def _density_numba(z, x, inv_s2):
    out = np.zeros(z.shape[0])
    for i in range(z.shape[0]):
        acc = 0.0
        for j in range(x.shape[0]):
            d0 = z[i, 0] - x[j, 0]
            d1 = z[i, 1] - x[j, 1]
            d2 = z[i, 2] - x[j, 2]
            q = (d0 * d0 + d1 * d1 + d2 * d2) * inv_s2
            if q <= EXP_UNDERFLOW:
                acc += math.exp(-q)
        out[i] = acc
    return out


def kde_density_blocked(points, votes, sigma, backend=None, block=4096):
    """:func:`kde_density` without the (S, N, 3) temporary."""
    z = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    x = np.ascontiguousarray(votes, dtype=np.float64).reshape(-1, 3)
    if resolve_backend(backend) == "numba":
        return _density_numba(z, x, 1.0 / sigma**2)
    out = np.zeros(len(z))
    for j0 in range(0, len(x), block):
        xb = x[j0:j0 + block]
        q = ((z[:, None, :] - xb[None, :, :]) ** 2).sum(-1) / sigma**2
        out += np.where(q > EXP_UNDERFLOW, 0.0, np.exp(-q)).sum(axis=1)
    return out


def cluster_votes(cloud: np.ndarray, offsets: np.ndarray, foreground: np.ndarray,
                  params: GmsParams = GmsParams(), backend: str | None = None):
    """Cluster the center votes ``cloud + offsets`` of foreground pixels.

    Returns ``(labels, modes)``. Each foreground pixel takes the label of its
    nearest mode; clusters smaller than ``min_cluster_pixels`` become
    background and the surviving labels are compacted to ``2..K+1`` in mode
    order, with ``modes[k]`` belonging to label ``k + 2``.
    """
    xyz = np.asarray(cloud, dtype=np.float64)
    off = np.asarray(offsets, dtype=np.float64)
    fg = np.asarray(foreground, dtype=bool)
    if xyz.shape != off.shape or xyz.shape[:2] != fg.shape:
        raise ValueError("cloud, offsets and foreground shapes disagree")
    labels = np.full(fg.shape, BACKGROUND, dtype=np.int64)
    pr, pc = np.nonzero(fg)
    if len(pr) == 0:
        return labels, np.zeros((0, 3))
    votes = xyz[pr, pc] + off[pr, pc]
    modes = find_modes(votes, params, backend=backend)
    assign, _ = nearest_mode(votes, modes)
    sizes = np.bincount(assign, minlength=len(modes))
    keep = sizes >= params.min_cluster_pixels
    remap = np.full(len(modes), -1, dtype=np.int64)
    remap[keep] = np.arange(keep.sum())
    new = remap[assign]
    labels[pr, pc] = np.where(new >= 0, new + FIRST_OBJECT, BACKGROUND)
    return labels, modes[keep]


def center_votes(cloud: np.ndarray, offsets: np.ndarray, foreground: np.ndarray) -> np.ndarray:
    fg = np.asarray(foreground, dtype=bool)
    return (np.asarray(cloud, dtype=np.float64) + np.asarray(offsets, dtype=np.float64))[fg]
