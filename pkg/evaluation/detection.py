"""Known-category AP and unknown recall."""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from detector import Instance, UNKNOWN
from geometry import Box, iou_matrix


@dataclass(frozen=True)
class GroundTruth:
    box: Box
    category_id: int
    known: bool


@dataclass
class DetectionResult:
    """Predictions and ground truth for one image; predictions are kept sorted by objectness."""

    image_id: int
    predictions: List[Instance]
    ground_truth: List[GroundTruth] = field(default_factory=list)

    def __post_init__(self):
        order = sorted(range(len(self.predictions)), key=lambda i: (-self.predictions[i].objectness, i))
        self.predictions = [self.predictions[i] for i in order]

    @property
    def known_gt(self) -> List[GroundTruth]:
        return [g for g in self.ground_truth if g.known]

    @property
    def unknown_gt(self) -> List[GroundTruth]:
        return [g for g in self.ground_truth if not g.known]


def all_points_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """
    Area under the interpolated precision/recall curve, PASCAL all-points style.

    Args:
        recall: Cumulative recall per ranked prediction
        precision: Cumulative precision per ranked prediction

    Returns:
        Average precision
    """
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _class_ap(results: Sequence[DetectionResult], category: int, iou_thresh: float) -> float:
    gt_by_image = {
        r.image_id: [g.box for g in r.known_gt if g.category_id == category] for r in results
    }
    num_gt = sum(len(v) for v in gt_by_image.values())

    ranked: List[Tuple[float, int, int, Box]] = []
    for order, r in enumerate(results):
        for j, inst in enumerate(r.predictions):
            if inst.label == category:
                ranked.append((inst.objectness, order, j, inst.box))
    ranked.sort(key=lambda x: (-x[0], x[1], x[2]))
    if num_gt == 0 or not ranked:
        return 0.0

    matched = {image_id: np.zeros(len(boxes), dtype=bool) for image_id, boxes in gt_by_image.items()}
    tp = np.zeros(len(ranked))
    for k, (_, order, _, box) in enumerate(ranked):
        image_id = results[order].image_id
        gts = gt_by_image[image_id]
        if not gts:
            continue
        overlaps = iou_matrix([box], gts)[0]
        overlaps[matched[image_id]] = -1.0
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_thresh:
            matched[image_id][best] = True
            tp[k] = 1.0

    cum_tp = np.cumsum(tp)
    recall = cum_tp / num_gt
    precision = cum_tp / np.arange(1, len(ranked) + 1)
    return all_points_ap(recall, precision)


def average_precision(results: Sequence[DetectionResult], iou_thresh: float = 0.5,
                      known_classes: Optional[Iterable[int]] = None) -> Tuple[Dict[int, float], float]:
    """
    Per-class AP and mAP over known categories.

    Predictions of each class are ranked by objectness across all images and
    greedily matched to the best unmatched gt box of that class at IoU >= thresh.

    Args:
        results: Per-image results
        iou_thresh: Match threshold
        known_classes: Classes to evaluate (defaults to the known classes present in gt)

    Returns:
        (per-class AP for classes present in gt, mAP); mAP is 0 when no class is present
    """
    present = sorted({g.category_id for r in results for g in r.known_gt})
    if known_classes is not None:
        wanted = set(known_classes)
        present = [c for c in present if c in wanted]

    per_class = {c: _class_ap(results, c, iou_thresh) for c in present}
    mean_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean_ap


def match_by_score(pred_boxes: Sequence[Box], scores: Sequence[float], gt_boxes: Sequence[Box],
                   iou_thresh: float) -> List[Tuple[int, int]]:
    """
    One-to-one greedy (pred, gt) matching in descending score order.

    Each prediction takes the unmatched gt box it overlaps most, if that
    overlap reaches iou_thresh. Equal scores keep input order; equal overlaps
    go to the lower gt index.

    Args:
        pred_boxes: Predicted boxes
        scores: Score per predicted box
        gt_boxes: Ground-truth boxes
        iou_thresh: Match threshold

    Returns:
        (pred, gt) index pairs in the order they were taken
    """
    if not pred_boxes or not gt_boxes:
        return []
    overlaps = iou_matrix(pred_boxes, gt_boxes)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    pairs: List[Tuple[int, int]] = []
    for i in sorted(range(len(pred_boxes)), key=lambda k: (-scores[k], k)):
        row = np.where(taken, -1.0, overlaps[i])
        best = int(np.argmax(row))
        if row[best] >= iou_thresh:
            taken[best] = True
            pairs.append((i, best))
    return pairs


def unknown_recall(results: Sequence[DetectionResult], iou_thresh: float = 0.5,
                   include_all: bool = False) -> float:
    """
    Fraction of unknown gt boxes recovered by predictions, matched greedily
    one-to-one in objectness order (see match_by_score).

    Args:
        results: Per-image results
        iou_thresh: Match threshold
        include_all: Count every prediction instead of only UNKNOWN-labeled ones

    Returns:
        U-Recall in [0, 1]; 0 when there is no unknown gt
    """
    total = 0
    recovered = 0
    for r in results:
        gts = [g.box for g in r.unknown_gt]
        total += len(gts)
        preds = [p for p in r.predictions if include_all or p.label == UNKNOWN]
        matches = match_by_score([p.box for p in preds], [p.objectness for p in preds], gts, iou_thresh)
        recovered += len(matches)
    if total == 0:
        return 0.0
    return recovered / total
