from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from geometry import Box, clamp_box, nms
from .constants import UNKNOWN
from .model import DenseOutput, DetectorConfig


@dataclass
class Instance:
    """One detection."""

    box: Box
    objectness: float
    label: int
    embedding: np.ndarray
    cell: Optional[Tuple[int, int]] = None
    category_prob: float = 0.0

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN


def _unit(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.maximum(norms, 1e-12)


def decode(out: DenseOutput, cfg: DetectorConfig, image_index: int = 0) -> List[Instance]:
    """
    Turn one image's dense output into a list of instances.

    Cells with sigmoid(objectness) >= score_thresh are kept, capped at topk by
    objectness (ties by cell index), suppressed with NMS, and labeled with
    the argmax known category when its softmax probability reaches
    unknown_margin, otherwise UNKNOWN.

    Args:
        out: Dense output of a forward pass
        cfg: Detector configuration holding the decode parameters
        image_index: Batch index to decode

    Returns:
        Instances in descending objectness order
    """
    with torch.no_grad():
        scores = torch.sigmoid(out.objectness[image_index]).double().cpu().numpy()
        probs = torch.softmax(out.cat_logits[image_index].double(), dim=-1).cpu().numpy()
        offsets = out.box_offsets[image_index].double().cpu().numpy()
        embeddings = out.embeddings[image_index].double().cpu().numpy()

    height, width = out.image_size
    flat_scores = scores.ravel()
    candidates = np.flatnonzero(flat_scores >= cfg.score_thresh)
    if candidates.size == 0:
        return []

    order = np.lexsort((candidates, -flat_scores[candidates]))
    candidates = candidates[order][:cfg.topk]

    wf = scores.shape[1]
    stride = out.stride
    pending: List[Instance] = []
    for flat in candidates.tolist():
        row, col = divmod(flat, wf)
        cx, cy = (col + 0.5) * stride, (row + 0.5) * stride
        l, t, r, b = offsets[row, col]
        box = clamp_box(Box(cx - l, cy - t, cx + r, cy + b), width, height)

        category = int(np.argmax(probs[row, col]))
        prob = float(probs[row, col, category])
        label = category if prob >= cfg.unknown_margin else UNKNOWN

        pending.append(Instance(
            box=box,
            objectness=float(scores[row, col]),
            label=label,
            embedding=_unit(embeddings[row, col]),
            cell=(row, col),
            category_prob=prob,
        ))

    kept = nms([(inst.box, inst.objectness) for inst in pending], cfg.nms_thresh)
    return [pending[i] for i in kept]


def decode_batch(out: DenseOutput, cfg: DetectorConfig) -> List[List[Instance]]:
    """Decode every image in a batch."""
    return [decode(out, cfg, i) for i in range(out.objectness.shape[0])]
