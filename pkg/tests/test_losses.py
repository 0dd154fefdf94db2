import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabletopseg.losses import (LossWeights, balanced_weights, center_offset_loss, cluster_loss,
                                cluster_loss_votes, cluster_pair_weights, direction_loss,
                                finite_difference_check, foreground_loss, huber, separation_loss,
                                separation_terms, total_loss_2d, total_loss_3d)


def random_labels(rng, h, w, k):
    lab = rng.integers(0, k + 2, size=(h, w))
    lab.flat[:k + 2] = np.arange(k + 2)
    return rng.permutation(lab.ravel()).reshape(h, w)


def random_probs(rng, h, w):
    p = rng.uniform(0.05, 1, size=(h, w, 3))
    return p / p.sum(axis=2, keepdims=True)


def unit2(rng, h, w):
    v = rng.normal(size=(h, w, 2))
    return v / np.linalg.norm(v, axis=2, keepdims=True)


# scalar-loop oracles ------------------------------------------------------

def fg_oracle(probs, labels):
    h, w, _ = probs.shape
    cls = [[min(int(labels[r, c]), 2) for c in range(w)] for r in range(h)]
    counts = {}
    for row in cls:
        for y in row:
            counts[y] = counts.get(y, 0) + 1
    total = 0.0
    for r in range(h):
        for c in range(w):
            y = cls[r][c]
            wgt = 1.0 / (counts[y] * len(counts))
            total += wgt * -math.log(probs[r, c, y] / sum(probs[r, c]))
    return total


def dir_oracle(dirs, gt_dirs, labels, lam):
    h, w, _ = dirs.shape
    counts = {}
    for y in labels.ravel():
        if y >= 2:
            counts[int(y)] = counts.get(int(y), 0) + 1
    rest = int((labels < 2).sum())
    total = 0.0
    for r in range(h):
        for c in range(w):
            y = int(labels[r, c])
            if y >= 2:
                a = 1.0 / (counts[y] * len(counts))
                total += a * (1 - (dirs[r, c, 0] * gt_dirs[r, c, 0] + dirs[r, c, 1] * gt_dirs[r, c, 1]))
            else:
                total += lam / rest * (1 - dirs[r, c, 1])
    return total


def co_oracle(cloud, offsets, centers, labels, delta):
    counts = {}
    for y in labels.ravel():
        if y >= 2:
            counts[int(y)] = counts.get(int(y), 0) + 1
    total = 0.0
    for (r, c), y in np.ndenumerate(labels):
        if y < 2:
            continue
        res = [cloud[r, c, i] + offsets[r, c, i] - centers[y - 2][i] for i in range(3)]
        n = math.sqrt(sum(v * v for v in res))
        rho = 0.5 * n * n if n <= delta else delta * (n - 0.5 * delta)
        total += rho / (counts[int(y)] * len(counts))
    return total


def sep_oracle(cloud, offsets, centers, labels, tau):
    counts = {}
    for y in labels.ravel():
        if y >= 2:
            counts[int(y)] = counts.get(int(y), 0) + 1
    total = 0.0
    for (r, c), y in np.ndenumerate(labels):
        if y < 2:
            continue
        v = cloud[r, c] + offsets[r, c]
        ex = [math.exp(-tau * math.dist(v, cj)) for cj in centers]
        total += -math.log(ex[y - 2] / sum(ex)) / (counts[int(y)] * len(counts))
    return total


def cl_oracle(votes, labels, seeds, sigma, delta, L):
    n = len(votes)
    ids = sorted(set(labels.tolist()))
    size = {k: int((labels == k).sum()) for k in ids}
    wj = [1.0 / (size[int(labels[j])] * len(ids)) for j in range(n)]
    Z = [list(votes[i]) for i in seeds]
    ys = [labels[i] for i in seeds]
    total = 0.0
    for _ in range(L):
        newZ = []
        for z in Z:
            ks = [math.exp(-sum((z[t] - votes[j][t]) ** 2 for t in range(3)) / sigma**2) for j in range(n)]
            s = sum(ks)
            newZ.append([sum(ks[j] * votes[j][t] for j in range(n)) / s for t in range(3)])
        Z = newZ
        for i, z in enumerate(Z):
            for j in range(n):
                d = math.dist(z, votes[j])
                total += wj[j] * (d * d if ys[i] == labels[j] else max(delta - d, 0.0) ** 2)
    return total


# values ------------------------------------------------------------------

def test_values_match_scalar_oracles(rng):
    for _ in range(5):
        lab = random_labels(rng, 6, 7, 3)
        probs = random_probs(rng, 6, 7)
        assert foreground_loss(probs, lab).value == pytest.approx(fg_oracle(probs, lab), rel=1e-12)
        d, g = unit2(rng, 6, 7), unit2(rng, 6, 7)
        assert direction_loss(d, g, lab, 0.1).value == pytest.approx(dir_oracle(d, g, lab, 0.1), rel=1e-12)
        cloud = rng.normal(size=(6, 7, 3))
        off = rng.normal(size=(6, 7, 3))
        cen = rng.normal(size=(3, 3))
        assert center_offset_loss(cloud, off, cen, lab, 1.0).value == pytest.approx(
            co_oracle(cloud, off, cen, lab, 1.0), rel=1e-12)
        assert separation_loss(cloud, off * 0.1, cen, lab, 15.0).value == pytest.approx(
            sep_oracle(cloud, off * 0.1, cen, lab, 15.0), rel=1e-10)


def test_cluster_value_matches_oracle(rng):
    votes = rng.normal(0, 0.05, size=(20, 3))
    labels = np.array([0] * 12 + [1] * 8)
    seeds = np.array([0, 3, 12, 15, 19])
    got = cluster_loss_votes(votes, labels, seeds, 0.05, 0.1, 3).value
    assert got == pytest.approx(cl_oracle(votes, labels, seeds, 0.05, 0.1, 3), rel=1e-10)


def test_foreground_examples(rng):
    lab = random_labels(rng, 5, 5, 2)
    onehot = np.eye(3)[np.minimum(lab, 2)]
    res = foreground_loss(onehot, lab)
    assert res.value == 0.0
    assert np.all(res.grad[onehot.astype(bool)] == 0.0)
    assert foreground_loss(np.full((5, 5, 3), 1 / 3), lab).value == pytest.approx(math.log(3))
    # a class absent from the image carries no weight
    only_bg = np.zeros((3, 3), int)
    assert foreground_loss(np.full((3, 3, 3), 1 / 3), only_bg).value == pytest.approx(math.log(3))


def test_direction_examples():
    lab = np.array([[0, 2], [1, 2]])
    gt = np.zeros((2, 2, 2))
    gt[..., 1] = 1
    gt[0, 1] = (1, 0)
    gt[1, 1] = (0, -1)
    v = gt.copy()
    assert direction_loss(v, gt, lab).value == 0.0
    single = np.array([[0, 2]])
    g1 = np.array([[[0, 1], [1, 0]]], float)
    v1 = np.array([[[0, 1], [0, 1]]], float)  # perpendicular on the object pixel
    assert direction_loss(v1, g1, single).value == pytest.approx(1.0)
    with pytest.raises(ValueError, match="zero-norm"):
        direction_loss(np.zeros((1, 2, 2)), g1, single)
    with pytest.raises(ValueError, match="unit"):
        direction_loss(2 * v1, g1, single)


def test_center_offset_examples(rng):
    lab = random_labels(rng, 4, 4, 2)
    cloud = rng.normal(size=(4, 4, 3))
    cen = rng.normal(size=(2, 3))
    exact = np.where((lab >= 2)[..., None], cen[np.maximum(lab - 2, 0)] - cloud, 0.0)
    res = center_offset_loss(cloud, exact, cen, lab)
    # exact up to the roundoff of (c - x) + x
    assert res.value == pytest.approx(0, abs=1e-28) and np.abs(res.grad).max() < 1e-15
    one = np.array([[2]])
    r = np.array([[[0.3, 0.4, 0.0]]])
    assert center_offset_loss(np.zeros((1, 1, 3)), r, np.zeros((1, 3)), one, 1.0).value == pytest.approx(0.125)
    assert huber(np.array([3.0]), 1.0)[0] == pytest.approx(2.5)


def test_center_offset_instance_size_invariance(rng):
    res_a = rng.normal(size=(3, 3))
    res_b = rng.normal(size=(5, 3))

    def total(copies):
        # instance 2 holds each residual ``copies`` times, instance 3 is fixed
        n = 3 * copies
        lab = np.array([[2] * n + [3] * 5])
        off = np.concatenate([np.tile(res_a, (copies, 1)), res_b])[None]
        return center_offset_loss(np.zeros_like(off), off, np.zeros((2, 3)), lab).value
    assert total(2) == pytest.approx(total(1), rel=1e-12)
    assert total(4) == pytest.approx(total(1), rel=1e-12)


def test_separation_examples():
    lab = np.array([[2, 2, 2]])
    cloud = np.random.default_rng(0).normal(size=(1, 3, 3))
    assert separation_loss(cloud, np.zeros_like(cloud), np.zeros((1, 3)), lab).value == pytest.approx(0, abs=1e-15)
    one = np.array([[2]])
    c = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    assert separation_loss(np.zeros((1, 1, 3)), np.zeros((1, 1, 3)), c, one).value == pytest.approx(math.log(2))
    # a vote exactly on a center stays finite
    v = separation_loss(np.zeros((1, 1, 3)), np.array([[[1.0, 0, 0]]]), c, one)
    assert np.isfinite(v.value) and np.all(np.isfinite(v.grad))


def test_cluster_examples():
    votes = np.tile([0.1, 0.2, 0.3], (6, 1))
    assert cluster_loss_votes(votes, np.zeros(6, int), np.arange(6), 0.02, 0.1, 1).value == pytest.approx(0, abs=1e-28)
    far = np.array([[0.0, 0, 0], [0.5, 0, 0]])
    assert cluster_loss_votes(far, np.array([0, 1]), np.arange(2), 0.02, 0.1, 1).value == pytest.approx(0, abs=1e-30)
    w = cluster_pair_weights(np.array([0, 0, 0, 1]))
    assert np.allclose(w, [1 / 6, 1 / 6, 1 / 6, 1 / 2]) and w.sum() == pytest.approx(1)


def test_balanced_weights_sum_to_one(rng):
    lab = random_labels(rng, 9, 9, 4)
    w = balanced_weights(lab, lab >= 2)
    assert w.sum() == pytest.approx(1, abs=1e-12)
    for k in range(2, 6):
        assert w[lab == k].sum() == pytest.approx(0.25)


@given(st.integers(0, 2**31 - 1))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    lab = random_labels(rng, 5, 5, 2)
    cloud = rng.normal(size=(5, 5, 3))
    off = rng.normal(size=(5, 5, 3)) * 0.1
    cen = rng.normal(size=(2, 3))
    assert foreground_loss(random_probs(rng, 5, 5), lab).value >= 0
    assert direction_loss(unit2(rng, 5, 5), unit2(rng, 5, 5), lab).value >= 0
    assert center_offset_loss(cloud, off, cen, lab).value >= 0
    assert separation_loss(cloud, off, cen, lab).value >= 0
    assert cluster_loss(cloud, off, lab, LossWeights(cluster_rollout=2), rng=seed).value >= 0


@given(st.integers(0, 2**31 - 1))
def test_separation_gradient_signs(seed):
    rng = np.random.default_rng(seed)
    votes = rng.normal(size=(10, 3))
    owner = rng.integers(0, 3, 10)
    centers = rng.normal(size=(3, 3))
    M, nll, dd, _ = separation_terms(votes, owner, centers, 15.0)
    rows = np.arange(10)
    assert np.all(dd[rows, owner] >= 0)
    other = np.ones_like(dd, bool)
    other[rows, owner] = False
    assert np.all(dd[other] <= 0)
    # dd is the derivative of -log M_own with respect to each distance
    d = np.linalg.norm(votes[:, None] - centers[None], axis=2)
    for j in range(3):
        e = np.zeros_like(d)
        e[:, j] = 1e-6
        f = lambda dist: -(-15 * dist[rows, owner]) + np.log(np.exp(-15 * dist).sum(axis=1))
        assert np.allclose((f(d + e) - f(d - e)) / 2e-6, dd[:, j], atol=1e-6)


def test_totals_are_weighted_sums(rng):
    lab = random_labels(rng, 6, 6, 2)
    probs = random_probs(rng, 6, 6)
    cloud = rng.normal(0, 0.05, size=(6, 6, 3))
    off = rng.normal(0, 0.05, size=(6, 6, 3))
    cen = rng.normal(0, 0.05, size=(2, 3))
    w = LossWeights()
    seeds = np.arange(int((lab >= 2).sum()))
    t = total_loss_3d(probs, cloud, off, cen, lab, w, seed_index=seeds)
    a = foreground_loss(probs, lab).value
    b = center_offset_loss(cloud, off, cen, lab).value
    c = cluster_loss(cloud, off, lab, w, seed_index=seeds).value
    d = separation_loss(cloud, off, cen, lab).value
    assert t.value == pytest.approx(3 * a + 5 * b + c + d, rel=1e-12)
    d2, g2 = unit2(rng, 6, 6), unit2(rng, 6, 6)
    t2 = total_loss_2d(probs, d2, g2, lab)
    assert t2.value == pytest.approx(a + direction_loss(d2, g2, lab).value, rel=1e-12)
    # all components at their optimum
    onehot = np.eye(3)[np.minimum(lab, 2)]
    flat = np.zeros_like(d2)
    flat[..., 1] = 1
    assert total_loss_2d(onehot, flat, flat, lab).value == 0.0


# gradients ---------------------------------------------------------------

def test_fd_checker_on_quadratic(rng):
    x = rng.normal(size=10)
    res = finite_difference_check(lambda v: (0.5 * v @ v, v.copy()), x)
    assert res.max_rel_error < 1e-8 and res.ok and res.checked == 10


def test_fd_checker_flags_kinks_and_nonfinite():
    def hinge(v):
        return max(0.1 - v[0], 0.0) + v[1] ** 2, np.array([-1.0 if v[0] < 0.1 else 0.0, 2 * v[1]])
    res = finite_difference_check(hinge, np.array([0.1, 0.3]))
    assert res.kinks.tolist() == [0] and res.checked == 1 and res.max_rel_error < 1e-6

    def blows_up(v):
        return (np.inf if v[0] > 0 else 0.0), np.zeros(1)
    res = finite_difference_check(blows_up, np.array([0.0]))
    assert res.nonfinite.tolist() == [0] and not res.ok
    with pytest.raises(ValueError):
        finite_difference_check(hinge, np.zeros(2), eps=1e-2)


def test_gradients_of_each_loss(rng):
    lab = random_labels(rng, 8, 8, 3)
    probs = random_probs(rng, 8, 8)
    assert finite_difference_check(lambda p: foreground_loss(p, lab), probs).max_rel_error < 1e-5
    g = unit2(rng, 8, 8)
    assert finite_difference_check(lambda v: direction_loss(v, g, lab), unit2(rng, 8, 8)).max_rel_error < 1e-5
    lab6 = random_labels(rng, 6, 6, 2)
    cloud = rng.normal(0, 0.5, size=(6, 6, 3))
    cen = rng.normal(0, 0.5, size=(2, 3))
    off = rng.normal(0, 0.8, size=(6, 6, 3))
    res = finite_difference_check(lambda o: center_offset_loss(cloud, o, cen, lab6, 1.0), off)
    assert res.max_rel_error < 1e-5
    lab12 = random_labels(rng, 3, 4, 3)
    c12 = rng.normal(size=(3, 4, 3)) * 0.1
    cen3 = rng.normal(size=(3, 3)) * 0.1
    res = finite_difference_check(lambda o: separation_loss(c12, o, cen3, lab12, 15.0),
                                  rng.normal(size=(3, 4, 3)) * 0.1)
    assert res.max_rel_error < 1e-5
    votes = rng.normal(0, 0.03, size=(20, 3))
    vl = np.array([0] * 10 + [1] * 10)
    seeds = np.sort(rng.choice(20, 5, replace=False))
    res = finite_difference_check(lambda x: cluster_loss_votes(x, vl, seeds, 0.02, 0.1, 2), votes)
    assert res.max_rel_error < 1e-4
