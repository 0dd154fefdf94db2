"""Overlap and boundary precision/recall/F-measure under Hungarian matching.

All reported values are percentages in [0, 100]. Only object instances
(label >= 2) are evaluated; background and table pixels are ignored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import FIRST_OBJECT, object_ids
from .imp import dilate, erode


def default_slack(height: int, width: int) -> int:
    """Boundary slack radius: 2 px at 640x480, scaled with the image diagonal."""
    return int(round(0.003 * math.hypot(height, width)))


def _f(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class MatchResult:
    pred_ids: np.ndarray
    gt_ids: np.ndarray
    assignment: list  # (pred_id, gt_id) pairs
    unmatched_pred: list
    unmatched_gt: list
    pair_f: np.ndarray  # (num_pred, num_gt) overlap F in [0, 1]

    @property
    def total_f(self) -> float:
        pi = {int(k): i for i, k in enumerate(self.pred_ids)}
        gi = {int(k): j for j, k in enumerate(self.gt_ids)}
        return math.fsum(self.pair_f[pi[p], gi[g]] for p, g in self.assignment)


@dataclass(frozen=True)
class PrfReport:
    overlap_p: float
    overlap_r: float
    overlap_f: float
    boundary_p: float
    boundary_r: float
    boundary_f: float
    extra: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {"overlap": {"p": self.overlap_p, "r": self.overlap_r, "f": self.overlap_f},
                "boundary": {"p": self.boundary_p, "r": self.boundary_r, "f": self.boundary_f}}


def _intersections(pred: np.ndarray, gt: np.ndarray, pred_ids, gt_ids) -> np.ndarray:
    """(num_pred, num_gt) pixel intersection counts via a joint histogram."""
    pi = np.full(int(pred.max(initial=0)) + 1, -1)
    gi = np.full(int(gt.max(initial=0)) + 1, -1)
    pi[pred_ids] = np.arange(len(pred_ids))
    gi[gt_ids] = np.arange(len(gt_ids))
    a = pi[pred.ravel()]
    b = gi[gt.ravel()]
    both = (a >= 0) & (b >= 0)
    flat = a[both] * len(gt_ids) + b[both]
    return np.bincount(flat, minlength=len(pred_ids) * len(gt_ids)).reshape(len(pred_ids), len(gt_ids))


def pairwise_scores(pred: np.ndarray, gt: np.ndarray, objective: str = "f"):
    """Pairwise overlap F (or IoU) between all predicted and GT instances."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    pred_ids, gt_ids = object_ids(pred), object_ids(gt)
    inter = _intersections(pred, gt, pred_ids, gt_ids).astype(np.float64)
    sp = np.array([(pred == k).sum() for k in pred_ids], dtype=np.float64)
    sg = np.array([(gt == k).sum() for k in gt_ids], dtype=np.float64)
    denom = sp[:, None] + sg[None, :]
    if objective == "f":
        score = np.divide(2 * inter, denom, out=np.zeros_like(inter), where=denom > 0)
    elif objective == "iou":
        union = denom - inter
        score = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    else:
        raise ValueError(f"unknown matching objective {objective!r}")
    return pred_ids, gt_ids, inter, score


def hungarian_match(pred: np.ndarray, gt: np.ndarray, objective: str = "f") -> MatchResult:
    """One-to-one matching that maximizes the summed pairwise score.

    ``objective`` is ``"f"`` (overlap F, the default) or ``"iou"``. Pairs
    with zero overlap are reported as unmatched. ``pair_f`` always holds the
    overlap F matrix, whatever the objective.
    """
    pred_ids, gt_ids, inter, score = pairwise_scores(pred, gt, objective)
    if objective == "f":
        pair_f = score
    else:
        pair_f = pairwise_scores(pred, gt, "f")[3]
    assignment = []
    if score.size:
        rows, cols = linear_sum_assignment(score, maximize=True)
        assignment = [(int(pred_ids[i]), int(gt_ids[j])) for i, j in zip(rows, cols) if inter[i, j] > 0]
    mp = {p for p, _ in assignment}
    mg = {g for _, g in assignment}
    return MatchResult(pred_ids=pred_ids, gt_ids=gt_ids, assignment=assignment,
                       unmatched_pred=[int(k) for k in pred_ids if k not in mp],
                       unmatched_gt=[int(k) for k in gt_ids if k not in mg],
                       pair_f=pair_f)


def _prf(tp_p: float, tot_p: float, tp_r: float, tot_r: float) -> tuple[float, float, float]:
    # 0/0 conventions: an empty side is perfect on its own ratio
    p = 100.0 * tp_p / tot_p if tot_p > 0 else 100.0
    r = 100.0 * tp_r / tot_r if tot_r > 0 else 100.0
    if tot_p == 0 and tot_r == 0:
        return 100.0, 100.0, 100.0
    if tot_p == 0 or tot_r == 0:
        return p if tot_p == 0 else 0.0, r if tot_r == 0 else 0.0, 0.0
    return p, r, _f(p, r)


def overlap_prf(pred: np.ndarray, gt: np.ndarray, match: MatchResult | None = None):
    """Pixel-overlap P/R/F over matched instance pairs."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    match = hungarian_match(pred, gt) if match is None else match
    tp = sum(int(np.count_nonzero((pred == p) & (gt == g))) for p, g in match.assignment)
    tot_p = int(np.count_nonzero(pred >= FIRST_OBJECT))
    tot_g = int(np.count_nonzero(gt >= FIRST_OBJECT))
    return _prf(tp, tot_p, tp, tot_g)


def extract_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with an 8-neighbor outside the mask; the frame edge is outside."""
    m = np.asarray(mask, dtype=bool)
    return m & ~erode(m, 1)


def boundary_prf(pred: np.ndarray, gt: np.ndarray, match: MatchResult | None = None,
                 slack_radius: int | None = None):
    """Boundary P/R/F: boundary pixels within ``slack_radius`` of the matched
    counterpart's boundary count as hits."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    match = hungarian_match(pred, gt) if match is None else match
    slack = default_slack(*gt.shape) if slack_radius is None else int(slack_radius)
    if slack < 0:
        raise ValueError("slack_radius must be >= 0")
    bp = {int(k): extract_boundary(pred == k) for k in match.pred_ids}
    bg = {int(k): extract_boundary(gt == k) for k in match.gt_ids}
    hit_p = hit_r = 0
    for p, g in match.assignment:
        hit_p += int(np.count_nonzero(bp[p] & dilate(bg[g], slack)))
        hit_r += int(np.count_nonzero(bg[g] & dilate(bp[p], slack)))
    tot_p = sum(int(b.sum()) for b in bp.values())
    tot_g = sum(int(b.sum()) for b in bg.values())
    return _prf(hit_p, tot_p, hit_r, tot_g)


def evaluate(pred: np.ndarray, gt: np.ndarray, slack_radius: int | None = None,
             objective: str = "f") -> PrfReport:
    match = hungarian_match(pred, gt, objective)
    op, or_, of = overlap_prf(pred, gt, match)
    bp, br, bf = boundary_prf(pred, gt, match, slack_radius)
    return PrfReport(op, or_, of, bp, br, bf,
                     extra={"matched": len(match.assignment),
                            "num_pred": len(match.pred_ids), "num_gt": len(match.gt_ids)})


def mean_report(reports) -> dict:
    reports = list(reports)
    keys = ("overlap", "boundary")
    out = {}
    for k in keys:
        out[k] = {m: (float(np.mean([r.as_dict()[k][m] for r in reports])) if reports else 0.0)
                  for m in ("p", "r", "f")}
    return out
