"""
Relational embedding transfer.

The teacher's pairwise instance similarities are distilled into the
student's embedding head, either as per-row softmax distributions (row-KL)
or directly (matrix-MSE).
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from detector import DenseOutput, Instance, cell_of_point, gather_embeddings
from detector.losses import check_finite
from geometry import Box
from .teacher import TeacherFeatureMap

ROW_KL = "row-KL"
MATRIX_MSE = "matrix-MSE"
LOSS_KINDS = (ROW_KL, MATRIX_MSE)

TEACHER = "teacher"
STUDENT = "student"


@dataclass
class TransferConfig:
    tau_t: float = 0.1
    loss_kind: str = ROW_KL
    lambda_transfer: float = 1.0
    min_instances: int = 2
    include_gt: bool = True
    include_candidates: bool = True
    cross_image: bool = False

    def __post_init__(self):
        if self.tau_t <= 0:
            raise ValueError(f"tau_t must be positive, got {self.tau_t}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got '{self.loss_kind}'")
        if self.lambda_transfer < 0:
            raise ValueError("lambda_transfer must be non-negative")


@dataclass
class SimilarityMatrix:
    """N x N cosine similarities; values keep the autograd graph for students."""

    values: torch.Tensor
    role: str = STUDENT

    @property
    def size(self) -> int:
        return int(self.values.shape[0])


@dataclass
class TransferSet:
    """Instances entering the similarity matrices of one image."""

    boxes: List[Box] = field(default_factory=list)
    cells: List[Tuple[int, int]] = field(default_factory=list)
    embeddings: torch.Tensor = None
    num_gt: int = 0
    num_candidates: int = 0

    def __len__(self) -> int:
        return len(self.boxes)


def roi_pool_teacher(f: TeacherFeatureMap, boxes: Sequence[Box]) -> np.ndarray:
    """
    Average teacher features over each box footprint and L2-normalize.

    The footprint is the set of teacher cells whose centers lie inside the
    box (min edges inclusive, max edges exclusive). A box containing no cell
    center falls back to the cell holding its center.

    Args:
        f: Teacher feature map
        boxes: Boxes in image pixels

    Returns:
        (N, Dt) unit vectors
    """
    ht, wt, dt = f.features.shape
    if not boxes:
        return np.zeros((0, dt), dtype=np.float64)

    centers_x = (np.arange(wt) + 0.5) * f.stride
    centers_y = (np.arange(ht) + 0.5) * f.stride

    pooled = np.zeros((len(boxes), dt), dtype=np.float64)
    for i, box in enumerate(boxes):
        cols = np.flatnonzero((centers_x >= box.x1) & (centers_x < box.x2))
        rows = np.flatnonzero((centers_y >= box.y1) & (centers_y < box.y2))
        if cols.size and rows.size:
            pooled[i] = f.features[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].mean(axis=(0, 1))
        else:
            cx, cy = box.center
            row, col = cell_of_point(cx, cy, (ht, wt), f.stride)
            pooled[i] = f.features[row, col]

    norms = np.linalg.norm(pooled, axis=1, keepdims=True)
    return pooled / np.maximum(norms, 1e-12)


def similarity_matrix(e: Union[torch.Tensor, np.ndarray], role: str = STUDENT) -> SimilarityMatrix:
    """
    Pairwise dot products of unit vectors, exactly symmetric.

    The upper triangle (diagonal included) is computed and mirrored.

    Args:
        e: (N, D) unit vectors
        role: TEACHER or STUDENT

    Returns:
        SimilarityMatrix; teacher matrices are detached
    """
    if isinstance(e, np.ndarray):
        e = torch.from_numpy(e)
    if e.ndim != 2 or e.shape[0] < 1:
        raise ValueError(f"Expected (N, D) vectors with N >= 1, got {tuple(e.shape)}")
    if role == TEACHER:
        e = e.detach()

    gram = e @ e.T
    upper = torch.triu(gram)
    values = upper + torch.triu(gram, diagonal=1).T
    return SimilarityMatrix(values=values, role=role)


def _off_diagonal(values: torch.Tensor) -> torch.Tensor:
    n = values.shape[0]
    keep = ~torch.eye(n, dtype=torch.bool, device=values.device)
    return values[keep].reshape(n, n - 1)


def transfer_loss(T: SimilarityMatrix, S: SimilarityMatrix, cfg: TransferConfig) -> torch.Tensor:
    """
    Distance between teacher and student similarity structure.

    row-KL: per row, softmax of the off-diagonal entries divided by tau_t for
    both matrices; mean over rows of KL(teacher row || student row).
    matrix-MSE: mean squared difference of the off-diagonal entries.

    Args:
        T: Teacher similarities (gradients blocked)
        S: Student similarities
        cfg: Transfer configuration

    Returns:
        Scalar loss; exactly 0 when N < min_instances
    """
    if T.size != S.size:
        raise ValueError(f"Teacher and student sizes differ: {T.size} vs {S.size}")
    student = S.values
    n = S.size
    if n < max(cfg.min_instances, 2):
        return student.sum() * 0.0

    teacher = T.values.detach().to(student.dtype)
    t_off = _off_diagonal(teacher)
    s_off = _off_diagonal(student)

    if cfg.loss_kind == ROW_KL:
        t_log = F.log_softmax(t_off / cfg.tau_t, dim=1)
        s_log = F.log_softmax(s_off / cfg.tau_t, dim=1)
        loss = (t_log.exp() * (t_log - s_log)).sum(dim=1).mean()
    else:
        loss = ((s_off - t_off) ** 2).mean()

    return check_finite("transfer", loss)


def collect_transfer_instances(gt: Sequence[Box], decoded: Sequence[Instance],
                               candidate_indices: Sequence[int], out: DenseOutput,
                               image_index: int, cfg: TransferConfig) -> TransferSet:
    """
    Gather the boxes and differentiable student embeddings for one image.

    Known ground-truth boxes come first, then the unknown candidates; each
    source can be switched off in the config. The student embedding is read
    at the cell holding each box center.

    Args:
        gt: Known ground-truth boxes (unknown categories are never annotated at train time)
        decoded: Decoded detections of the image
        candidate_indices: Indices into decoded selected as unknown candidates
        out: Dense output the embeddings are read from
        image_index: Batch index of the image
        cfg: Transfer configuration

    Returns:
        TransferSet with (N, D) unit embeddings
    """
    boxes: List[Box] = []
    if cfg.include_gt:
        boxes.extend(gt)
    num_gt = len(boxes)
    if cfg.include_candidates:
        boxes.extend(decoded[i].box for i in candidate_indices)

    grid = out.grid_size
    cells = [cell_of_point(*box.center, grid, out.stride) for box in boxes]
    return TransferSet(
        boxes=boxes,
        cells=cells,
        embeddings=gather_embeddings(out, image_index, cells),
        num_gt=num_gt,
        num_candidates=len(boxes) - num_gt,
    )
