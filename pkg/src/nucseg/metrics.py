"""Panoptic-quality evaluation with dataset-level pooling.

Per matched pair the IoU is accumulated; PQ for a slot is
``iou_sum / (tp + 0.5 fp + 0.5 fn)``.  ``PQ`` averages the class-agnostic
value per image, while ``PQ+`` and the per-class values pool tp/fp/fn/iou
counts over the whole dataset before dividing, and ``mPQ+`` is the
unweighted mean of the six per-class pooled values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .types import N_CLASSES, REPORT_COLUMNS

# Slot layout inside PQStats arrays: index 0 is the class-agnostic slot,
# indices 1..6 the per-class slots.
N_SLOTS = N_CLASSES + 1


@dataclass(frozen=True)
class PQStats:
    """Matching statistics per slot; associative-mergeable with zero identity."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    iou_sum: np.ndarray

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (N_SLOTS,) or (arr < 0).any():
                raise ValueError(f"{name} must be {N_SLOTS} non-negative counts")
            object.__setattr__(self, name, arr)
        iou = np.asarray(self.iou_sum, dtype=np.float64)
        if iou.shape != (N_SLOTS,) or (iou < 0).any() or (iou > self.tp + 1e-9).any():
            raise ValueError("iou_sum must be in [0, tp] per slot")
        object.__setattr__(self, "iou_sum", iou)

    @classmethod
    def zero(cls) -> "PQStats":
        z = np.zeros(N_SLOTS, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), np.zeros(N_SLOTS, dtype=np.float64))


def merge_stats(a: PQStats, b: PQStats) -> PQStats:
    """Fieldwise sum; commutative and associative with :meth:`PQStats.zero`."""
    return PQStats(a.tp + b.tp, a.fp + b.fp, a.fn + b.fn, a.iou_sum + b.iou_sum)


@dataclass(frozen=True)
class MatchResult:
    matches: list[tuple[int, int, float]]
    unmatched_gt: list[int]
    unmatched_pred: list[int]

    @property
    def iou_sum(self) -> float:
        return float(sum(m[2] for m in self.matches))


def _areas(labels: np.ndarray) -> dict[int, int]:
    ids, counts = np.unique(labels, return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts) if i > 0}


def match_instances(
    gt: np.ndarray, pred: np.ndarray, iou_threshold: float = 0.5
) -> MatchResult:
    """Match instances by IoU over pixel sets.

    Pairs with IoU strictly above the threshold are reported; at thresholds
    >= 0.5 the matching is necessarily one-to-one.  Overlaps are counted
    sparsely from co-occurring label pairs, never via dense per-instance
    masks, so images with hundreds of instances stay cheap.
    """
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError("shape mismatch")
    if iou_threshold < 0.5:
        raise ValueError("iou_threshold must be >= 0.5")
    gt_areas = _areas(gt)
    pred_areas = _areas(pred)
    both = (gt > 0) & (pred > 0)
    matches: list[tuple[int, int, float]] = []
    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    if both.any():
        g = gt[both].astype(np.int64)
        p = pred[both].astype(np.int64)
        codes = g * (int(pred.max()) + 1) + p
        pairs, inter = np.unique(codes, return_counts=True)
        gid = pairs // (int(pred.max()) + 1)
        pid = pairs % (int(pred.max()) + 1)
        for gi, pi, ov in zip(gid, pid, inter):
            gi, pi, ov = int(gi), int(pi), int(ov)
            union = gt_areas[gi] + pred_areas[pi] - ov
            iou = ov / union
            if iou > iou_threshold:
                matches.append((gi, pi, iou))
                matched_gt.add(gi)
                matched_pred.add(pi)
    matches.sort()
    return MatchResult(
        matches,
        sorted(set(gt_areas) - matched_gt),
        sorted(set(pred_areas) - matched_pred),
    )


def _majority_classes(inst: np.ndarray, classes: np.ndarray) -> dict[int, int]:
    """Per-instance class by pixel majority; background wins only if alone."""
    out: dict[int, int] = {}
    for iid in np.unique(inst):
        if iid <= 0:
            continue
        ballot = np.bincount(classes[inst == iid].astype(np.int64), minlength=N_CLASSES + 1)
        fg = ballot[1:]
        out[int(iid)] = int(fg.argmax()) + 1 if fg.sum() else 0
    return out


def _restrict(inst: np.ndarray, inst_cls: dict[int, int], cls: int) -> np.ndarray:
    keep = np.zeros(int(inst.max()) + 1, dtype=bool)
    for iid, c in inst_cls.items():
        keep[iid] = c == cls
    out = inst.astype(np.int64).copy()
    out[~keep[out]] = 0
    return out


def accumulate_pq(
    gt_inst: np.ndarray,
    gt_class: np.ndarray,
    pred_inst: np.ndarray,
    pred_class: np.ndarray,
    stats: PQStats,
    iou_threshold: float = 0.5,
) -> PQStats:
    """Fold one image's matching statistics into ``stats``.

    The class-agnostic slot matches all instances; each per-class slot
    matches only the instances voted into that class on both sides, so a
    correct shape with the wrong class contributes one FP and one FN.
    Returns a new PQStats (inputs are not mutated).
    """
    gt_inst = np.asarray(gt_inst)
    pred_inst = np.asarray(pred_inst)
    gt_class = np.asarray(gt_class)
    pred_class = np.asarray(pred_class)
    if not (gt_inst.shape == pred_inst.shape == gt_class.shape == pred_class.shape):
        raise ValueError("shape mismatch")
    tp = np.zeros(N_SLOTS, dtype=np.int64)
    fp = np.zeros(N_SLOTS, dtype=np.int64)
    fn = np.zeros(N_SLOTS, dtype=np.int64)
    iou = np.zeros(N_SLOTS, dtype=np.float64)

    res = match_instances(gt_inst, pred_inst, iou_threshold)
    tp[0], fp[0], fn[0] = len(res.matches), len(res.unmatched_pred), len(res.unmatched_gt)
    iou[0] = res.iou_sum

    gt_cls = _majority_classes(gt_inst, gt_class)
    pred_cls = _majority_classes(pred_inst, pred_class)
    for c in range(1, N_CLASSES + 1):
        if c not in gt_cls.values() and c not in pred_cls.values():
            continue
        res = match_instances(
            _restrict(gt_inst, gt_cls, c), _restrict(pred_inst, pred_cls, c), iou_threshold
        )
        tp[c], fp[c], fn[c] = len(res.matches), len(res.unmatched_pred), len(res.unmatched_gt)
        iou[c] = res.iou_sum
    return merge_stats(stats, PQStats(tp, fp, fn, iou))


def _pq_value(tp: int, fp: int, fn: int, iou_sum: float) -> float:
    denom = tp + 0.5 * fp + 0.5 * fn
    return iou_sum / denom if denom > 0 else 0.0


@dataclass(frozen=True)
class EvalReport:
    """Dataset scores; ``per_class_pq_plus`` is keyed by class id 1..6."""

    mpq_plus: float
    pq: float
    pq_plus: float
    per_class_pq_plus: dict[int, float] = field(default_factory=dict)

    def lines(self) -> list[tuple[str, float]]:
        """Report rows as (name, value) in the fixed column order."""
        rows = [("mPQ+", self.mpq_plus), ("PQ", self.pq), ("PQ+", self.pq_plus)]
        rows += [(f"PQ+ - {abbr}", self.per_class_pq_plus[cid]) for abbr, cid in REPORT_COLUMNS]
        return rows


def report(per_image_agnostic: Sequence[PQStats] | Iterable[PQStats], pooled: PQStats) -> EvalReport:
    """Build the evaluation report from per-image and pooled statistics.

    ``PQ`` is the mean class-agnostic value over images, skipping images with
    no instances on either side (tp = fp = fn = 0).  ``pooled`` must be the
    merge of all per-image stats.
    """
    per_image = list(per_image_agnostic)
    if not per_image:
        raise ValueError("empty dataset")
    per_image_pq = [
        _pq_value(int(s.tp[0]), int(s.fp[0]), int(s.fn[0]), float(s.iou_sum[0]))
        for s in per_image
        if int(s.tp[0] + s.fp[0] + s.fn[0]) > 0
    ]
    pq = float(np.mean(per_image_pq)) if per_image_pq else 0.0
    pq_plus = _pq_value(int(pooled.tp[0]), int(pooled.fp[0]), int(pooled.fn[0]), float(pooled.iou_sum[0]))
    per_class = {
        c: _pq_value(int(pooled.tp[c]), int(pooled.fp[c]), int(pooled.fn[c]), float(pooled.iou_sum[c]))
        for c in range(1, N_CLASSES + 1)
    }
    mpq_plus = float(np.mean(list(per_class.values())))
    return EvalReport(mpq_plus, pq, pq_plus, per_class)
