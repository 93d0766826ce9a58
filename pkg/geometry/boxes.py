"""
Box and mask arithmetic.

Coordinates are continuous with the origin at the top-left corner and
exclusive max edges, so an integer box (x1, y1, x2, y2) covers the pixel
columns x1..x2-1 and rows y1..y2-1.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from utils.errors import EmptyMask, ShapeMismatch


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"Invalid box {self.as_tuple()}: max edge below min edge")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.x1, self.y1, self.x2, self.y2

    def to_xywh(self) -> List[float]:
        """COCO-style [x, y, w, h]."""
        return [self.x1, self.y1, self.width, self.height]

    @classmethod
    def from_xywh(cls, xywh: Sequence[float]) -> "Box":
        x, y, w, h = xywh
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """H x W occupancy grid with values in {0, 1}."""

    cells: np.ndarray

    def __post_init__(self):
        if self.cells.ndim != 2 or self.cells.shape[0] < 1 or self.cells.shape[1] < 1:
            raise ShapeMismatch(f"Mask must be a non-empty 2-D grid, got shape {self.cells.shape}")
        object.__setattr__(self, "cells", self.cells.astype(bool))

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    def is_empty(self) -> bool:
        return not self.cells.any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(np.array_equal(self.cells, other.cells))


def _intersection(a: Box, b: Box) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is empty."""
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: IoU minus the fraction of the enclosing hull not covered by the union."""
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    hull = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    if hull <= 0:
        return 0.0
    overlap = inter / union if union > 0 else 0.0
    return overlap - (hull - union) / hull


def mask_to_box(mask: BinaryMask) -> Box:
    """
    Tightest box covering every nonzero cell of a mask.

    Args:
        mask: Binary mask

    Returns:
        Box with exclusive right/bottom edges

    Raises:
        EmptyMask: if the mask has no nonzero cell
    """
    rows = np.flatnonzero(mask.cells.any(axis=1))
    cols = np.flatnonzero(mask.cells.any(axis=0))
    if rows.size == 0:
        raise EmptyMask(f"Mask of shape {mask.cells.shape} has no nonzero cell")
    return Box(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def clamp_box(box: Box, width: float, height: float) -> Box:
    """Clip a box to the image rectangle [0, width] x [0, height]."""
    x1 = min(max(box.x1, 0.0), width)
    y1 = min(max(box.y1, 0.0), height)
    x2 = min(max(box.x2, x1), width)
    y2 = min(max(box.y2, y1), height)
    return Box(x1, y1, x2, y2)


def boxes_to_array(boxes: Sequence[Box]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def iou_matrix(a: Sequence[Box], b: Sequence[Box]) -> np.ndarray:
    """
    Pairwise IoU between two box lists.

    Args:
        a: N boxes
        b: M boxes

    Returns:
        (N, M) IoU array
    """
    aa, bb = boxes_to_array(a), boxes_to_array(b)
    if aa.shape[0] == 0 or bb.shape[0] == 0:
        return np.zeros((aa.shape[0], bb.shape[0]), dtype=np.float64)

    lt = np.maximum(aa[:, None, :2], bb[None, :, :2])
    rb = np.minimum(aa[:, None, 2:], bb[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]

    area_a = (aa[:, 2] - aa[:, 0]) * (aa[:, 3] - aa[:, 1])
    area_b = (bb[:, 2] - bb[:, 0]) * (bb[:, 3] - bb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(instances: Sequence[Tuple[Box, float]], iou_thresh: float) -> List[int]:
    """
    Greedy non-maximum suppression.

    Boxes are visited by descending score, ties broken by input index; a box is
    kept when its IoU with every previously kept box is at most iou_thresh.

    Args:
        instances: (box, score) pairs
        iou_thresh: Suppression threshold in [0, 1]

    Returns:
        Kept input indices in visiting order
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must lie in [0, 1], got {iou_thresh}")
    if not instances:
        return []

    boxes = [box for box, _ in instances]
    scores = np.array([score for _, score in instances], dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    overlaps = iou_matrix(boxes, boxes)

    kept: List[int] = []
    for idx in order.tolist():
        if all(overlaps[idx, k] <= iou_thresh for k in kept):
            kept.append(idx)
    return kept


def giou_loss_terms(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    """
    Differentiable GIoU between matching rows of two (N, 4) xyxy tensors.

    Args:
        pred: Predicted boxes
        target: Target boxes

    Returns:
        (N,) GIoU values
    """
    area_p = (pred[:, 2] - pred[:, 0]).clamp(min=0) * (pred[:, 3] - pred[:, 1]).clamp(min=0)
    area_t = (target[:, 2] - target[:, 0]).clamp(min=0) * (target[:, 3] - target[:, 1]).clamp(min=0)

    lt = torch.max(pred[:, :2], target[:, :2])
    rb = torch.min(pred[:, 2:], target[:, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[:, 0] * wh[:, 1]
    union = area_p + area_t - inter

    hull_lt = torch.min(pred[:, :2], target[:, :2])
    hull_rb = torch.max(pred[:, 2:], target[:, 2:])
    hull_wh = (hull_rb - hull_lt).clamp(min=0)
    hull = hull_wh[:, 0] * hull_wh[:, 1]

    overlap = inter / (union + eps)
    return overlap - (hull - union) / (hull + eps)
