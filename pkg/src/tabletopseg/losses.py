"""Reference training losses with analytic gradients.

Every loss returns ``LossValue(value, grad)`` where ``grad`` has the shape of
the prediction it differentiates. Weighting is instance-balanced: each
class (foreground loss) or instance (the others) receives the same total
weight and the weights over the weighted set sum to one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import FIRST_OBJECT, NUM_CLASSES, semantic_classes

UP = np.array([0.0, 1.0])


class LossValue(NamedTuple):
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class LossWeights:
    fg: float = 3.0
    co: float = 5.0
    cl: float = 1.0
    sep: float = 1.0
    bt: float = 0.1
    tau: float = 15.0
    delta: float = 0.1
    huber_delta: float = 1.0
    sigma: float = 0.02
    cluster_rollout: int = 5
    cluster_seeds: int = 150

    def __post_init__(self):
        for name in ("fg", "co", "cl", "sep", "bt", "huber_delta", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau <= 0 or self.delta <= 0 or self.sigma <= 0:
            raise ValueError("tau, delta and sigma must be positive")


def balanced_weights(groups: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel weights inversely proportional to group size, summing to 1.

    Pixels outside ``mask`` get weight 0. Every present group receives total
    weight ``1 / num_groups``.
    """
    g = np.asarray(groups)
    m = np.ones(g.shape, bool) if mask is None else np.asarray(mask, bool)
    w = np.zeros(g.shape)
    ids, inverse, counts = np.unique(g[m], return_inverse=True, return_counts=True)
    if len(ids):
        w[m] = 1.0 / (counts[inverse.ravel()] * len(ids))
    return w


# foreground -------------------------------------------------------------

def foreground_loss(probs: np.ndarray, gt_labels: np.ndarray) -> LossValue:
    """Class-balanced cross entropy of predicted class probabilities.

    Each pixel's probabilities are renormalized before the log, so the
    gradient is that of ``-log(F_y / sum_c F_c)`` and vanishes on the
    correct entry of an already-correct one-hot prediction.
    """
    F = np.asarray(probs, dtype=np.float64)
    if F.ndim != 3 or F.shape[2] != NUM_CLASSES:
        raise ValueError(f"probs must be (H, W, {NUM_CLASSES})")
    cls = semantic_classes(gt_labels)
    if cls.shape != F.shape[:2]:
        raise ValueError("probs and labels disagree on image size")
    w = balanced_weights(cls)
    total = F.sum(axis=2)
    py = np.take_along_axis(F, cls[..., None], axis=2)[..., 0]
    with np.errstate(divide="ignore"):
        nll = np.log(total) - np.log(py)
    value = float(np.sum(np.where(w > 0, w * nll, 0.0)))
    grad = np.repeat((w / total)[..., None], NUM_CLASSES, axis=2)
    onehot = np.eye(NUM_CLASSES, dtype=bool)[cls]
    with np.errstate(divide="ignore", invalid="ignore"):
        grad[onehot] -= (w / py).ravel()
    return LossValue(value, grad)


# direction --------------------------------------------------------------

def direction_loss(dirs: np.ndarray, gt_dirs: np.ndarray, gt_labels: np.ndarray,
                   lambda_bt: float = 0.1, unit_tol: float = 1e-5) -> LossValue:
    """Instance-weighted cosine loss on object pixels plus a pull of
    background/table pixels toward ``(0, 1)``."""
    V = np.asarray(dirs, dtype=np.float64)
    Vb = np.asarray(gt_dirs, dtype=np.float64)
    lab = np.asarray(gt_labels)
    norms = np.linalg.norm(V, axis=2)
    if np.any(norms == 0):
        raise ValueError("zero-norm predicted direction: cosine undefined")
    if np.any(np.abs(norms - 1.0) > unit_tol):
        raise ValueError("predicted directions must be unit vectors")
    obj = lab >= FIRST_OBJECT
    rest = ~obj
    alpha = balanced_weights(lab, obj)
    grad = np.zeros_like(V)
    value = float(np.sum(alpha[obj] * (1.0 - np.sum(V[obj] * Vb[obj], axis=1))))
    grad[obj] = -alpha[obj, None] * Vb[obj]
    n_rest = int(rest.sum())
    if n_rest:
        scale = lambda_bt / n_rest
        value += scale * float(np.sum(1.0 - V[rest] @ UP))
        grad[rest] = -scale * UP
    return LossValue(value, grad)


# center offsets ---------------------------------------------------------

def huber(r: np.ndarray, delta: float) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def center_offset_loss(cloud: np.ndarray, offsets: np.ndarray, centers: np.ndarray,
                       gt_labels: np.ndarray, huber_delta: float = 1.0) -> LossValue:
    """Huber penalty on the norm of ``D_i + V'_i - c_i`` over object pixels.

    ``centers[k]`` is the center of label ``k + 2``.
    """
    D = np.asarray(cloud, dtype=np.float64)
    Vp = np.asarray(offsets, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    lab = np.asarray(gt_labels)
    obj = lab >= FIRST_OBJECT
    w = balanced_weights(lab, obj)
    grad = np.zeros_like(Vp)
    if not obj.any():
        return LossValue(0.0, grad)
    res = D[obj] + Vp[obj] - c[lab[obj] - FIRST_OBJECT]
    r = np.linalg.norm(res, axis=1)
    value = float(np.sum(w[obj] * huber(r, huber_delta)))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r <= huber_delta, 1.0, huber_delta / r)
    grad[obj] = (w[obj] * scale)[:, None] * res
    return LossValue(value, grad)


# separation -------------------------------------------------------------

def _distances(votes: np.ndarray, centers: np.ndarray):
    diff = votes[:, None, :] - centers[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(d[..., None] > 0, diff / d[..., None], 0.0)
    return d, unit


def separation_terms(votes: np.ndarray, owner: np.ndarray, centers: np.ndarray, tau: float):
    """Softmax ``M`` over ``-tau * d(c_j, vote)`` and per-vote loss ``-log M_own``.

    Also returns ``dloss/dd`` (N, J): ``tau * (1 - M_own)`` for the own center
    and ``-tau * M_j`` for the others.
    """
    d, unit = _distances(votes, centers)
    logits = -tau * d
    lse = logits.max(axis=1, keepdims=True)
    lse = lse + np.log(np.exp(logits - lse).sum(axis=1, keepdims=True))
    M = np.exp(logits - lse)
    rows = np.arange(len(votes))
    nll = lse[:, 0] - logits[rows, owner]
    dd = -tau * M
    dd[rows, owner] += tau
    return M, nll, dd, unit


def separation_loss(cloud: np.ndarray, offsets: np.ndarray, centers: np.ndarray,
                    gt_labels: np.ndarray, tau: float = 15.0) -> LossValue:
    """Instance-weighted cross entropy on the softmax of negative amplified
    vote-to-center distances, with the pixel's own center as target."""
    D = np.asarray(cloud, dtype=np.float64)
    Vp = np.asarray(offsets, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    lab = np.asarray(gt_labels)
    obj = lab >= FIRST_OBJECT
    grad = np.zeros_like(Vp)
    if not obj.any():
        return LossValue(0.0, grad)
    if len(c) == 0:
        raise ValueError("separation loss needs at least one center")
    w = balanced_weights(lab, obj)[obj]
    votes = D[obj] + Vp[obj]
    _, nll, dd, unit = separation_terms(votes, lab[obj] - FIRST_OBJECT, c, tau)
    value = float(np.sum(w * nll))
    grad[obj] = w[:, None] * np.einsum("nj,njk->nk", dd, unit)
    return LossValue(value, grad)


# clustering -------------------------------------------------------------

def cluster_pair_weights(vote_labels: np.ndarray) -> np.ndarray:
    """Per-vote weight ``1 / (K * n_{y_j})``; sums to 1 for every seed."""
    ids, inv, counts = np.unique(vote_labels, return_inverse=True, return_counts=True)
    return 1.0 / (counts[inv.ravel()] * len(ids))


def _cluster_level(Z, X, ys, yx, w, delta, with_grad=True):
    """Loss of one unrolled level and its gradients w.r.t. Z and X."""
    diff = Z[:, None, :] - X[None, :, :]
    d2 = (diff ** 2).sum(-1)
    d = np.sqrt(d2)
    same = ys[:, None] == yx[None, :]
    hinge = np.maximum(delta - d, 0.0)
    value = float(np.sum(w[None, :] * np.where(same, d2, hinge * hinge)))
    if not with_grad:
        return value, None, None
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(same, 2.0, np.where(d > 0, -2.0 * hinge / d, 0.0))
    pair = (w[None, :] * coef)[..., None] * diff
    return value, pair.sum(axis=1), -pair.sum(axis=0)


def cluster_loss_votes(votes: np.ndarray, vote_labels: np.ndarray, seed_index: np.ndarray,
                       sigma: float, delta: float, rollout: int, with_grad: bool = True) -> LossValue:
    """Cluster loss of unrolled GMS on explicit votes; gradient w.r.t. votes.

    Seeds start at ``votes[seed_index]`` and the loss of each of the
    ``rollout`` levels is summed. The gradient flows through every GMS step
    and through the seed initialization. ``with_grad=False`` skips the
    backward pass and returns a zero gradient.
    """
    X = np.asarray(votes, dtype=np.float64)
    yx = np.asarray(vote_labels)
    idx = np.asarray(seed_index, dtype=np.int64)
    ys = yx[idx]
    w = cluster_pair_weights(yx)
    inv_s2 = 1.0 / sigma**2
    Z = X[idx].copy()
    tape = []
    value = 0.0
    level_grads = []
    for _ in range(rollout):
        Kmat = np.exp(-((Z[:, None, :] - X[None, :, :]) ** 2).sum(-1) * inv_s2)
        s = Kmat.sum(axis=1, keepdims=True)
        P = Kmat / s
        Zn = P @ X
        tape.append((Z, P, Zn))
        v, gz, gx = _cluster_level(Zn, X, ys, yx, w, delta, with_grad)
        value += v
        level_grads.append((gz, gx))
        Z = Zn
    gX = np.zeros_like(X)
    if not with_grad:
        return LossValue(value, gX)
    gZ = np.zeros((len(idx), 3))
    for (Zprev, P, Zn), (gz, gx) in zip(reversed(tape), reversed(level_grads)):
        G = gZ + gz
        gX += gx
        # Zn_i = sum_j P_ij X_j with P = softmax_j(-|Zprev_i - X_j|^2 / sigma^2)
        e = G @ X.T                      # (S, N) G_i . X_j
        gi_zn = np.sum(G * Zn, axis=1)   # (S,)
        Q = P * (e - gi_zn[:, None])     # d(G.Zn)/d logK
        diff = Zprev[:, None, :] - X[None, :, :]
        gX += P.T @ G
        gX += 2.0 * inv_s2 * np.einsum("ij,ijk->jk", Q, diff)
        gZ = -2.0 * inv_s2 * np.einsum("ij,ijk->ik", Q, diff)
    np.add.at(gX, idx, gZ)
    return LossValue(value, gX)


def sample_seed_index(num_votes: int, num_seeds: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement; all votes when there are too few."""
    if num_votes <= num_seeds:
        return np.arange(num_votes)
    return np.sort(rng.choice(num_votes, size=num_seeds, replace=False))


def cluster_loss(cloud: np.ndarray, offsets: np.ndarray, gt_labels: np.ndarray,
                 weights: LossWeights = LossWeights(), rng: np.random.Generator | int = 0,
                 seed_index: np.ndarray | None = None, with_grad: bool = True) -> LossValue:
    """Cluster loss over the object-pixel votes ``D + V'``; gradient w.r.t. ``V'``.

    Seed indices are drawn from ``rng`` unless given; they are treated as
    constants when differentiating.
    """
    D = np.asarray(cloud, dtype=np.float64)
    Vp = np.asarray(offsets, dtype=np.float64)
    lab = np.asarray(gt_labels)
    obj = lab >= FIRST_OBJECT
    grad = np.zeros_like(Vp)
    n = int(obj.sum())
    if n == 0:
        return LossValue(0.0, grad)
    if seed_index is None:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        seed_index = sample_seed_index(n, weights.cluster_seeds, rng)
    votes = D[obj] + Vp[obj]
    res = cluster_loss_votes(votes, lab[obj], seed_index, weights.sigma, weights.delta,
                             weights.cluster_rollout, with_grad)
    grad[obj] = res.grad
    return LossValue(res.value, grad)


# totals -----------------------------------------------------------------

class TotalLoss(NamedTuple):
    value: float
    grad: tuple
    components: dict


def total_loss_3d(probs, cloud, offsets, centers, gt_labels,
                  weights: LossWeights = LossWeights(), rng=0, seed_index=None,
                  with_grad: bool = True) -> TotalLoss:
    """``fg*l_fg + co*l_co + cl*l_cl + sep*l_sep``; grad is ``(dF, dV')``."""
    fg = foreground_loss(probs, gt_labels)
    co = center_offset_loss(cloud, offsets, centers, gt_labels, weights.huber_delta)
    cl = cluster_loss(cloud, offsets, gt_labels, weights, rng=rng, seed_index=seed_index,
                      with_grad=with_grad)
    sep = separation_loss(cloud, offsets, centers, gt_labels, weights.tau)
    value = weights.fg * fg.value + weights.co * co.value + weights.cl * cl.value + weights.sep * sep.value
    g_off = weights.co * co.grad + weights.cl * cl.grad + weights.sep * sep.grad
    comps = {"fg": fg.value, "co": co.value, "cl": cl.value, "sep": sep.value}
    return TotalLoss(value, (weights.fg * fg.grad, g_off), comps)


def total_loss_2d(probs, dirs, gt_dirs, gt_labels, lambda_bt: float = 0.1) -> TotalLoss:
    """``l_fg + l_dir``; grad is ``(dF, dV)``."""
    fg = foreground_loss(probs, gt_labels)
    dr = direction_loss(dirs, gt_dirs, gt_labels, lambda_bt)
    return TotalLoss(fg.value + dr.value, (fg.grad, dr.grad), {"fg": fg.value, "dir": dr.value})


# gradient checking -------------------------------------------------------

@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    kinks: np.ndarray          # flat indices flagged non-differentiable
    nonfinite: np.ndarray      # flat indices where a perturbed loss was not finite
    rel_errors: np.ndarray

    @property
    def ok(self) -> bool:
        return self.nonfinite.size == 0


def finite_difference_check(loss_fn: Callable[[np.ndarray], tuple], x: np.ndarray, eps: float = 1e-6,
                            coords: np.ndarray | None = None,
                            value_fn: Callable[[np.ndarray], float] | None = None) -> GradCheck:
    """Compare ``loss_fn(x)[1]`` with central differences coordinate by coordinate.

    Relative error uses ``max(|g|, 1e-8)`` as denominator. A coordinate is
    flagged as a kink when the gap between its one-sided slopes does not
    shrink with the step (smooth curvature halves it when the step halves);
    kinks are left out of the maximum. ``value_fn``, when given, evaluates
    the perturbed points instead of ``loss_fn`` (a cheaper value-only path).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must be in [1e-6, 1e-3]")
    x = np.array(x, dtype=np.float64)
    f0, g = loss_fn(x)
    f0 = float(f0)
    g = np.asarray(g, dtype=np.float64).ravel()
    flat = x.reshape(-1)

    def at(k, h):
        orig = flat[k]
        flat[k] = orig + h
        v = float(loss_fn(x)[0] if value_fn is None else value_fn(x))
        flat[k] = orig
        return v

    idx = np.arange(flat.size) if coords is None else np.asarray(coords).ravel()
    rel = np.zeros(len(idx))
    kinks, bad = [], []
    for n, k in enumerate(idx):
        fp, fm = at(k, eps), at(k, -eps)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            bad.append(k)
            continue
        gap = abs((fp - f0) - (f0 - fm)) / eps
        if gap > 1e-6 * max(1.0, abs(g[k])):
            fp2, fm2 = at(k, 2 * eps), at(k, -2 * eps)
            gap2 = abs((fp2 - f0) - (f0 - fm2)) / (2 * eps)
            if gap2 < 1.5 * gap:
                kinks.append(k)
                continue
        fd = (fp - fm) / (2 * eps)
        rel[n] = abs(fd - g[k]) / max(abs(g[k]), 1e-8)
    skip = np.isin(idx, np.array(kinks + bad, dtype=np.int64))
    return GradCheck(float(rel[~skip].max(initial=0.0)), int((~skip).sum()),
                     np.array(kinks, dtype=np.int64), np.array(bad, dtype=np.int64), rel)
