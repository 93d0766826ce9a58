"""Identity metrics for tracking-by-detection."""
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from assignment import FORBIDDEN, hungarian
from geometry import Box, iou_matrix

# One frame: (track_id, box) observations
FrameTracks = Sequence[Tuple[int, Box]]


@dataclass(frozen=True)
class TrackingScore:
    id_switches: int
    idf1_like: float
    precision: float
    recall: float
    num_matches: int


def match_frame(pred: FrameTracks, gt: FrameTracks, iou_thresh: float) -> List[Tuple[int, int]]:
    """Optimal (pred index, gt index) pairs at IoU >= thresh for one frame."""
    if not pred or not gt:
        return []
    overlaps = iou_matrix([b for _, b in pred], [b for _, b in gt])
    cost = np.where(overlaps >= iou_thresh, 1.0 - overlaps, FORBIDDEN)
    return hungarian(cost)


def tracking_metrics(pred_tracks: Sequence[FrameTracks], gt_tracks: Sequence[FrameTracks],
                     iou_thresh: float = 0.5) -> TrackingScore:
    """
    ID switches, identity F1, and detection precision/recall of a tracking run.

    Boxes are matched per frame with the Hungarian solver. A switch is
    counted when a gt track's matched pred id differs from the pred id it was
    matched to in its previous matched frame. idf1_like is the F1 of matches
    whose pred id equals the one globally assigned to their gt id, where the
    global gt-to-pred id assignment maximizes co-occurring matches.

    Args:
        pred_tracks: Per-frame predicted observations
        gt_tracks: Per-frame ground-truth observations (same frame count)
        iou_thresh: Per-frame match threshold

    Returns:
        TrackingScore
    """
    if len(pred_tracks) != len(gt_tracks):
        raise ValueError(f"Frame counts differ: {len(pred_tracks)} predicted vs {len(gt_tracks)} ground truth")

    last_pred: Dict[int, int] = {}
    co_occurrence: Counter = Counter()
    switches = 0
    matches = 0
    num_pred = sum(len(f) for f in pred_tracks)
    num_gt = sum(len(f) for f in gt_tracks)

    for pred, gt in zip(pred_tracks, gt_tracks):
        for p, g in match_frame(pred, gt, iou_thresh):
            pred_id, gt_id = pred[p][0], gt[g][0]
            if gt_id in last_pred and last_pred[gt_id] != pred_id:
                switches += 1
            last_pred[gt_id] = pred_id
            co_occurrence[(gt_id, pred_id)] += 1
            matches += 1

    id_tp = 0
    if co_occurrence:
        gt_ids = sorted({g for g, _ in co_occurrence})
        pred_ids = sorted({p for _, p in co_occurrence})
        counts = np.zeros((len(gt_ids), len(pred_ids)))
        for (g, p), n in co_occurrence.items():
            counts[gt_ids.index(g), pred_ids.index(p)] = n
        id_tp = int(sum(counts[r, c] for r, c in hungarian(-counts)))

    denominator = num_pred + num_gt
    return TrackingScore(
        id_switches=switches,
        idf1_like=2.0 * id_tp / denominator if denominator else 0.0,
        precision=matches / num_pred if num_pred else 0.0,
        recall=matches / num_gt if num_gt else 0.0,
        num_matches=matches,
    )
