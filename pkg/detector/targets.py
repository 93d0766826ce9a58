from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from geometry import Box
from .constants import CENTER_REGION
from .model import DetectorConfig, cell_centers


@dataclass
class TargetMap:
    """
    Per-cell training targets for one image.

    positive: (Hf, Wf) bool
    category: (Hf, Wf) int64, -1 on negatives
    offsets: (Hf, Wf, 4) float64 (l, t, r, b) pixel distances, 0 on negatives
    gt_index: (Hf, Wf) int64 index into the gt list, -1 on negatives
    """

    positive: np.ndarray
    category: np.ndarray
    offsets: np.ndarray
    gt_index: np.ndarray

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())


def assign_targets(gt: Sequence[Tuple[Box, int]], cfg: DetectorConfig,
                   image_size: Tuple[int, int]) -> TargetMap:
    """
    Center-sampling assignment of ground-truth boxes to grid cells.

    A cell is positive for the smallest-area box whose central region (the
    middle CENTER_REGION fraction of each side, edges inclusive) contains the
    cell center; area ties go to the lower gt index.

    Args:
        gt: (box, category) pairs for known categories
        cfg: Detector configuration
        image_size: (height, width) in pixels

    Returns:
        TargetMap for the image
    """
    height, width = image_size
    grid = (height // cfg.stride, width // cfg.stride)
    cx, cy = cell_centers(grid, cfg.stride)

    positive = np.zeros(grid, dtype=bool)
    category = np.full(grid, -1, dtype=np.int64)
    offsets = np.zeros(grid + (4,), dtype=np.float64)
    gt_index = np.full(grid, -1, dtype=np.int64)
    best_area = np.full(grid, np.inf)

    half = CENTER_REGION / 2.0
    for idx, (box, cat) in enumerate(gt):
        bx, by = box.center
        inside = (
            (cx >= bx - half * box.width) & (cx <= bx + half * box.width)
            & (cy >= by - half * box.height) & (cy <= by + half * box.height)
        )
        take = inside & (box.area < best_area)
        best_area[take] = box.area
        positive[take] = True
        category[take] = cat
        gt_index[take] = idx
        offsets[take] = np.stack(
            [cx[take] - box.x1, cy[take] - box.y1, box.x2 - cx[take], box.y2 - cy[take]], axis=-1
        )

    return TargetMap(positive=positive, category=category, offsets=offsets, gt_index=gt_index)


@dataclass
class BatchTargets:
    """Stacked torch targets for a batch."""

    positive: torch.Tensor
    category: torch.Tensor
    offsets: torch.Tensor

    @classmethod
    def stack(cls, maps: List[TargetMap], dtype: torch.dtype = torch.float32) -> "BatchTargets":
        return cls(
            positive=torch.from_numpy(np.stack([m.positive for m in maps])),
            category=torch.from_numpy(np.stack([m.category for m in maps])),
            offsets=torch.from_numpy(np.stack([m.offsets for m in maps])).to(dtype),
        )
