"""
Unknown box refinement.

High-objectness detections that do not overlap any known ground-truth box
are treated as unknown candidates. Class-agnostic masks are converted to
boxes and matched to the candidates. Each match supervises the candidate's
box regression, marks its cell as an object and pulls its category
distribution toward uniform, which is what decode labels UNKNOWN.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from assignment import FORBIDDEN, greedy_match, hungarian
from detector import Instance
from detector.losses import check_finite
from geometry import Box, BinaryMask, giou_loss_terms, iou_matrix, mask_to_box
from utils import logger

# Candidates overlapping a known gt box at or above this IoU are excluded
KNOWN_OVERLAP_IOU = 0.5

MATCHING_SCHEMES = ("hungarian", "greedy")


@dataclass
class RefineConfig:
    """
    Unknown refinement settings.

    lambda_unknown weights the uniform-category term of matched cells; 0 keeps
    refinement to box localization only. With pseudo_objectness off, matched
    cells are left out of the objectness term instead of becoming positives.
    """

    tau_obj: float = 0.3
    tau_iou: float = 0.5
    lambda_l1: float = 1.0
    lambda_giou: float = 1.0
    max_candidates: int = 20
    lambda_unknown: float = 1.0
    pseudo_objectness: bool = True
    matching: str = "hungarian"

    def __post_init__(self):
        for name in ("tau_obj", "tau_iou"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if min(self.lambda_l1, self.lambda_giou, self.lambda_unknown) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.max_candidates < 0:
            raise ValueError("max_candidates must be non-negative")
        if self.matching not in MATCHING_SCHEMES:
            raise ValueError(f"matching must be one of {MATCHING_SCHEMES}, got {self.matching!r}")


@dataclass(frozen=True)
class PseudoPair:
    """A candidate matched to a mask-derived target box."""

    pred_index: int
    target_box: Box
    match_iou: float


def select_unknown_candidates(instances: Sequence[Instance], known_gt: Sequence[Box],
                              cfg: RefineConfig) -> List[int]:
    """
    Indices of instances that may be unknown objects.

    Args:
        instances: Decoded detections for one image
        known_gt: Ground-truth boxes of known categories
        cfg: Refine configuration

    Returns:
        Up to max_candidates indices, by descending objectness then index
    """
    if not instances:
        return []

    boxes = [inst.box for inst in instances]
    overlaps = iou_matrix(boxes, known_gt)
    max_overlap = overlaps.max(axis=1) if overlaps.shape[1] else np.zeros(len(boxes))

    keep = [
        i for i, inst in enumerate(instances)
        if inst.objectness >= cfg.tau_obj and max_overlap[i] < KNOWN_OVERLAP_IOU
    ]
    keep.sort(key=lambda i: (-instances[i].objectness, i))
    return keep[:cfg.max_candidates]


def build_pseudo_targets(candidate_boxes: Sequence[Box], masks: Sequence[BinaryMask],
                         cfg: RefineConfig,
                         candidate_ids: Optional[Sequence[int]] = None,
                         known_gt: Sequence[Box] = ()) -> List[PseudoPair]:
    """
    Match candidates to mask boxes one-to-one.

    With matching "hungarian" the cost is 1 - IoU and pairs below tau_iou are
    forbidden; with "greedy" the highest remaining IoU is taken first. Either
    way each mask box supervises at most one candidate and every pair
    reaches tau_iou. Empty masks are dropped, and so are mask boxes
    overlapping a known gt box at KNOWN_OVERLAP_IOU or more (those masks
    segment known objects).

    Args:
        candidate_boxes: Boxes of the unknown candidates
        masks: Class-agnostic masks for the image
        cfg: Refine configuration
        candidate_ids: Identifier recorded as pred_index for each candidate
            (defaults to the position in candidate_boxes)
        known_gt: Known ground-truth boxes of the image

    Returns:
        Pseudo pairs ordered by pred_index position
    """
    if candidate_ids is None:
        candidate_ids = list(range(len(candidate_boxes)))
    if len(candidate_ids) != len(candidate_boxes):
        raise ValueError("candidate_ids and candidate_boxes differ in length")

    mask_boxes = [mask_to_box(m) for m in masks if not m.is_empty()]
    dropped = len(masks) - len(mask_boxes)
    if dropped:
        logger.warning(f"Dropped {dropped} empty mask(s) before pseudo-target matching")

    if known_gt and mask_boxes:
        known_overlap = iou_matrix(mask_boxes, known_gt).max(axis=1)
        mask_boxes = [b for b, o in zip(mask_boxes, known_overlap) if o < KNOWN_OVERLAP_IOU]

    if not candidate_boxes or not mask_boxes:
        return []

    overlaps = iou_matrix(candidate_boxes, mask_boxes)
    if cfg.matching == "greedy":
        matches = sorted(greedy_match(overlaps, cfg.tau_iou))
    else:
        cost = np.where(overlaps >= cfg.tau_iou, 1.0 - overlaps, FORBIDDEN)
        matches = hungarian(cost)

    return [
        PseudoPair(pred_index=candidate_ids[r], target_box=mask_boxes[c], match_iou=float(overlaps[r, c]))
        for r, c in matches
    ]


def refine_loss(pairs: Sequence[PseudoPair], pred_boxes: torch.Tensor, cfg: RefineConfig,
                image_size: Tuple[int, int]) -> torch.Tensor:
    """
    Box-regression loss against mask-derived targets.

    Mean over pairs of lambda_l1 * L1 / image diagonal + lambda_giou * (1 - GIoU).

    Args:
        pairs: Pseudo pairs
        pred_boxes: Differentiable (len(pairs), 4) predicted boxes aligned with pairs
        cfg: Refine configuration
        image_size: (height, width), used for the diagonal

    Returns:
        Scalar loss; exactly 0 for empty pairs
    """
    if not pairs:
        return pred_boxes.sum() * 0.0
    if pred_boxes.shape != (len(pairs), 4):
        raise ValueError(f"Expected ({len(pairs)}, 4) predicted boxes, got {tuple(pred_boxes.shape)}")

    height, width = image_size
    diagonal = math.hypot(height, width)
    targets = pred_boxes.new_tensor([p.target_box.as_tuple() for p in pairs])

    l1 = (pred_boxes - targets).abs().sum(dim=1) / diagonal
    giou_term = 1.0 - giou_loss_terms(pred_boxes, targets)
    loss = (cfg.lambda_l1 * l1 + cfg.lambda_giou * giou_term).mean()
    return check_finite("refine", loss)


def gather_candidate_cells(instances: Sequence[Instance], pairs: Sequence[PseudoPair]) -> List[Tuple[int, int]]:
    """
    Grid cells of the matched candidates, aligned with pairs.

    Args:
        instances: Decoded detections the pairs index into
        pairs: Pseudo pairs whose pred_index points into instances

    Returns:
        (row, col) per pair

    Raises:
        ValueError: if a matched instance does not carry its cell
    """
    cells = []
    for p in pairs:
        cell = instances[p.pred_index].cell
        if cell is None:
            raise ValueError(f"Instance {p.pred_index} has no grid cell")
        cells.append(cell)
    return cells


def unknown_category_loss(cat_logits: torch.Tensor) -> torch.Tensor:
    """
    KL divergence from the uniform distribution to the category softmax,
    averaged over rows.

    Zero exactly when a row's logits are all equal. Its top probability is
    then 1/K, so decode labels the cell UNKNOWN whenever unknown_margin > 1/K.

    Args:
        cat_logits: (N, K) category logits of matched candidate cells

    Returns:
        Scalar loss; exactly 0 for no rows
    """
    if cat_logits.shape[0] == 0:
        return cat_logits.sum() * 0.0
    num_classes = cat_logits.shape[1]
    log_probs = F.log_softmax(cat_logits, dim=1)
    loss = (-math.log(num_classes) - log_probs.mean(dim=1)).mean()
    return check_finite("refine", loss)
