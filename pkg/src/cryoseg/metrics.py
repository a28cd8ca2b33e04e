"""Instance-level evaluation: AJI, panoptic quality and Dice."""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ValidationError

__all__ = [
    "MatchResult",
    "MetricReport",
    "overlap_table",
    "match_instances",
    "aji",
    "panoptic_quality",
    "dice_score",
    "evaluate_pair",
    "aggregate_reports",
]

METRIC_NAMES = ("aji", "pq", "sq", "rq", "dice")


@dataclass
class MatchResult:
    pairs: list  # (gt id, pred id, iou)
    unmatched_pred: set
    unmatched_gt: set


@dataclass
class MetricReport:
    aji: float
    pq: float
    sq: float
    rq: float
    dice: float
    tp: int
    fp: int
    fn: int
    id: str = ""
    organ: str = ""
    fold: int = -1

    def as_dict(self):
        return asdict(self)


@dataclass
class OverlapTable:
    """Pixel counts shared between every gt and pred instance."""

    gt_ids: np.ndarray
    pred_ids: np.ndarray
    inter: np.ndarray  # (n_gt, n_pred)
    gt_area: np.ndarray
    pred_area: np.ndarray
    union: np.ndarray = field(init=False)
    iou: np.ndarray = field(init=False)

    def __post_init__(self):
        self.union = self.gt_area[:, None] + self.pred_area[None, :] - self.inter
        with np.errstate(divide="ignore", invalid="ignore"):
            self.iou = np.where(self.union > 0, self.inter / np.maximum(self.union, 1), 0.0)


def _check_pair(gt, pred):
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValidationError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    return gt, pred


def overlap_table(gt, pred):
    gt, pred = _check_pair(gt, pred)
    gt_ids, gt_inv = np.unique(gt.ravel(), return_inverse=True)
    pred_ids, pred_inv = np.unique(pred.ravel(), return_inverse=True)
    # shift so that background maps to row/col 0 even when absent
    g = gt_inv.astype(np.int64) + (0 if gt_ids.size and gt_ids[0] == 0 else 1)
    p = pred_inv.astype(np.int64) + (0 if pred_ids.size and pred_ids[0] == 0 else 1)
    gt_ids = gt_ids[gt_ids != 0]
    pred_ids = pred_ids[pred_ids != 0]
    table = kernels.contingency(
        np.ascontiguousarray(g), np.ascontiguousarray(p), gt_ids.size, pred_ids.size
    )
    return OverlapTable(
        gt_ids=gt_ids,
        pred_ids=pred_ids,
        inter=table[1:, 1:],
        gt_area=table[1:, :].sum(axis=1),
        pred_area=table[:, 1:].sum(axis=0),
    )


def _match(table, iou_floor):
    n_gt, n_pred = table.inter.shape
    candidates = []
    if n_pred:
        best = np.argmax(table.iou, axis=1)
        for i in range(n_gt):
            j = int(best[i])
            iou = float(table.iou[i, j])
            if iou > iou_floor:
                candidates.append((-iou, int(table.gt_ids[i]), i, j))
    candidates.sort()
    used_pred = set()
    pairs = []
    for neg_iou, _, i, j in candidates:
        if j in used_pred:
            continue
        used_pred.add(j)
        pairs.append((i, j, -neg_iou))
    pairs.sort()
    return pairs


def match_instances(gt, pred, iou_floor=0.0):
    """Greedy one-to-one matching of gt instances to their best prediction.

    Each gt proposes its max-IoU prediction; proposals above ``iou_floor`` are
    accepted in order of decreasing IoU (ties: lower gt id first) as long as
    the prediction is still free.
    """
    table = overlap_table(gt, pred)
    idx_pairs = _match(table, iou_floor)
    pairs = [(int(table.gt_ids[i]), int(table.pred_ids[j]), iou) for i, j, iou in idx_pairs]
    matched_gt = {g for g, _, _ in pairs}
    matched_pred = {p for _, p, _ in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_pred={int(p) for p in table.pred_ids} - matched_pred,
        unmatched_gt={int(g) for g in table.gt_ids} - matched_gt,
    )


def _aji_from_table(table):
    n_gt, n_pred = table.inter.shape
    if n_gt == 0 and n_pred == 0:
        return 1.0
    pairs = _match(table, 0.0)
    inter = 0
    union = 0
    gt_done = np.zeros(n_gt, dtype=bool)
    pred_done = np.zeros(n_pred, dtype=bool)
    for i, j, _ in pairs:
        inter += int(table.inter[i, j])
        union += int(table.union[i, j])
        gt_done[i] = True
        pred_done[j] = True
    union += int(table.gt_area[~gt_done].sum())
    union += int(table.pred_area[~pred_done].sum())
    return inter / union if union else 0.0


def aji(gt, pred):
    """Aggregated Jaccard index with one-to-one greedy pairing.

    Unmatched ground truth adds its area to the denominator, as do
    predictions left without a partner. Two empty maps score 1.
    """
    return _aji_from_table(overlap_table(gt, pred))


def _pq_from_table(table):
    n_gt, n_pred = table.inter.shape
    if n_gt == 0 and n_pred == 0:
        return dict(pq=1.0, sq=1.0, rq=1.0, tp=0, fp=0, fn=0)
    pairs = _match(table, 0.5)
    tp = len(pairs)
    fp = n_pred - tp
    fn = n_gt - tp
    rq = tp / (tp + 0.5 * fp + 0.5 * fn)
    sq = sum(iou for _, _, iou in pairs) / tp if tp else 0.0
    return dict(pq=sq * rq, sq=sq, rq=rq, tp=tp, fp=fp, fn=fn)


def panoptic_quality(gt, pred):
    """PQ, SQ, RQ and the TP/FP/FN counts at the IoU > 0.5 matching rule."""
    return _pq_from_table(overlap_table(gt, pred))


def dice_score(gt, pred):
    gt, pred = _check_pair(gt, pred)
    a = gt > 0
    b = pred > 0
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def evaluate_pair(gt, pred, id="", organ="", fold=-1):
    table = overlap_table(gt, pred)
    pq = _pq_from_table(table)
    return MetricReport(
        aji=_aji_from_table(table),
        dice=dice_score(gt, pred),
        id=id,
        organ=organ,
        fold=fold,
        **pq,
    )


def _mean_row(reports):
    return {name: float(np.mean([getattr(r, name) for r in reports])) for name in METRIC_NAMES}


def aggregate_reports(reports):
    """Unweighted per-organ, per-fold and overall means of image reports.

    ``overall`` is the mean of the per-fold means (the grand average over the
    cross-validation rounds); ``image_mean`` averages images directly.
    """
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to aggregate")
    by_organ = {}
    by_fold = {}
    for r in reports:
        by_organ.setdefault(r.organ, []).append(r)
        by_fold.setdefault(r.fold, []).append(r)
    per_organ = {k: _mean_row(v) for k, v in sorted(by_organ.items())}
    per_fold = {k: _mean_row(v) for k, v in sorted(by_fold.items())}
    overall = {
        name: float(np.mean([row[name] for row in per_fold.values()])) for name in METRIC_NAMES
    }
    return {
        "per_organ": per_organ,
        "per_fold": per_fold,
        "overall": overall,
        "image_mean": _mean_row(reports),
        "count": len(reports),
    }
