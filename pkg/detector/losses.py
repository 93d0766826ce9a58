from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from geometry import giou_loss_terms
from utils.errors import NonFinite
from .model import DenseOutput
from .targets import BatchTargets


def check_finite(term: str, value: torch.Tensor) -> torch.Tensor:
    """Raise NonFinite naming the term when a loss value is NaN or Inf."""
    if not torch.isfinite(value).all():
        raise NonFinite(term, float(value.detach().reshape(-1)[0]))
    return value


def offsets_to_boxes(offsets: torch.Tensor, cx: torch.Tensor, cy: torch.Tensor) -> torch.Tensor:
    """(N, 4) ltrb distances around (N,) centers -> (N, 4) xyxy boxes."""
    return torch.stack(
        [cx - offsets[:, 0], cy - offsets[:, 1], cx + offsets[:, 2], cy + offsets[:, 3]], dim=1
    )


def detection_loss(out: DenseOutput, targets: BatchTargets,
                   objectness_ignore: Optional[torch.Tensor] = None,
                   objectness_extra: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """
    Supervised loss over known categories.

    Objectness: binary cross-entropy over every cell not in objectness_ignore;
    positives and objectness_extra cells are the objectness targets.
    Category: cross-entropy over positive cells.
    Box: L1 on stride-normalized offsets plus (1 - GIoU), over positive cells.
    Each term is mean-reduced over its own support.

    Args:
        out: Dense output for the batch
        targets: Stacked targets from assign_targets
        objectness_ignore: Optional (B, Hf, Wf) bool mask of cells excluded
            from the objectness term; objectness targets are never ignored
        objectness_extra: Optional (B, Hf, Wf) bool mask of extra objectness
            positives that get no category or box supervision

    Returns:
        (total, terms) where terms maps objectness/category/box to scalars
    """
    positive = targets.positive
    obj_positive = positive if objectness_extra is None else positive | objectness_extra
    obj_target = obj_positive.to(out.objectness.dtype)

    obj_support = torch.ones_like(positive)
    if objectness_ignore is not None:
        obj_support = ~(objectness_ignore & ~obj_positive)
    obj_loss = F.binary_cross_entropy_with_logits(
        out.objectness[obj_support], obj_target[obj_support], reduction="mean"
    )

    zero = out.objectness.sum() * 0.0
    if positive.any():
        cat_loss = F.cross_entropy(out.cat_logits[positive], targets.category[positive], reduction="mean")

        rows = torch.nonzero(positive, as_tuple=False)
        stride = float(out.stride)
        cx = (rows[:, 2].to(out.box_offsets.dtype) + 0.5) * stride
        cy = (rows[:, 1].to(out.box_offsets.dtype) + 0.5) * stride
        pred_offsets = out.box_offsets[positive]
        target_offsets = targets.offsets.to(pred_offsets.dtype)[positive]

        l1 = (pred_offsets - target_offsets).abs().mean(dim=1) / stride
        pred_boxes = offsets_to_boxes(pred_offsets, cx, cy)
        target_boxes = offsets_to_boxes(target_offsets, cx, cy)
        box_loss = (l1 + (1.0 - giou_loss_terms(pred_boxes, target_boxes))).mean()
    else:
        cat_loss = zero
        box_loss = zero

    terms = {
        "objectness": check_finite("objectness", obj_loss),
        "category": check_finite("category", cat_loss),
        "box": check_finite("box", box_loss),
    }
    total = terms["objectness"] + terms["category"] + terms["box"]
    return total, terms
