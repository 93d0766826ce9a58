"""
Compact single-scale dense detector.

A small stack of stride-2 convolutions reduces the image to a feature grid
with the configured stride; four 3x3 heads predict objectness, known-category
logits, box offsets and instance embeddings at every cell.
"""
import math
from dataclasses import dataclass, field, asdict
from typing import List, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.errors import ShapeMismatch
from .constants import (
    DEFAULT_STRIDE,
    DEFAULT_EMBED_DIM,
    DEFAULT_SCORE_THRESH,
    DEFAULT_NMS_THRESH,
    DEFAULT_TOPK,
    DEFAULT_UNKNOWN_MARGIN,
    PRIOR_PROB,
)


@dataclass
class DetectorConfig:
    stride: int = DEFAULT_STRIDE
    num_classes: int = 4
    embed_dim: int = DEFAULT_EMBED_DIM
    channels: List[int] = field(default_factory=lambda: [16, 32, 64])
    score_thresh: float = DEFAULT_SCORE_THRESH
    nms_thresh: float = DEFAULT_NMS_THRESH
    topk: int = DEFAULT_TOPK
    unknown_margin: float = DEFAULT_UNKNOWN_MARGIN

    def __post_init__(self):
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ValueError(f"stride must be a power of two, got {self.stride}")
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be at least 2, got {self.embed_dim}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be positive, got {self.num_classes}")
        if len(self.channels) < 1:
            raise ValueError("channels must list at least one width")
        self.channels = list(self.channels)

    @property
    def num_downsamples(self) -> int:
        return int(math.log2(self.stride))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DenseOutput:
    """
    Per-cell predictions for a batch, channel-last.

    objectness: (B, Hf, Wf) logits
    cat_logits: (B, Hf, Wf, K)
    box_offsets: (B, Hf, Wf, 4) non-negative (left, top, right, bottom) pixel distances
    embeddings: (B, Hf, Wf, D) raw, not normalized
    """

    objectness: torch.Tensor
    cat_logits: torch.Tensor
    box_offsets: torch.Tensor
    embeddings: torch.Tensor
    stride: int

    @property
    def grid_size(self) -> Tuple[int, int]:
        return int(self.objectness.shape[1]), int(self.objectness.shape[2])

    @property
    def image_size(self) -> Tuple[int, int]:
        """(height, width) in pixels."""
        hf, wf = self.grid_size
        return hf * self.stride, wf * self.stride

    def select(self, index: int) -> "DenseOutput":
        """Single-image view keeping the batch dimension."""
        return DenseOutput(
            objectness=self.objectness[index:index + 1],
            cat_logits=self.cat_logits[index:index + 1],
            box_offsets=self.box_offsets[index:index + 1],
            embeddings=self.embeddings[index:index + 1],
            stride=self.stride,
        )


def _conv(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)


class DenseDetector(nn.Module):
    """FCOS-style single-scale detector with an extra embedding head."""

    def __init__(self, config: DetectorConfig):
        super().__init__()
        self.config = config

        widths = config.channels
        layers: List[nn.Module] = []
        in_ch = 3
        for i in range(max(config.num_downsamples, len(widths))):
            out_ch = widths[min(i, len(widths) - 1)]
            step = 2 if i < config.num_downsamples else 1
            layers += [_conv(in_ch, out_ch, step), nn.SiLU()]
            in_ch = out_ch
        self.backbone = nn.Sequential(*layers)

        self.objectness_head = _conv(in_ch, 1)
        self.category_head = _conv(in_ch, config.num_classes)
        self.box_head = _conv(in_ch, 4)
        self.embedding_head = _conv(in_ch, config.embed_dim)

        self.reset_parameters()

    def reset_parameters(self) -> None:
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
                nn.init.zeros_(module.bias)
        for head in (self.objectness_head, self.category_head, self.box_head, self.embedding_head):
            nn.init.normal_(head.weight, std=0.01)
        nn.init.constant_(self.objectness_head.bias, -math.log((1.0 - PRIOR_PROB) / PRIOR_PROB))

    def forward(self, images: torch.Tensor) -> DenseOutput:
        """
        Run all four heads in one pass.

        Args:
            images: (B, 3, H, W) tensor, H and W divisible by the stride

        Returns:
            DenseOutput with (H/s, W/s) spatial maps
        """
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeMismatch(f"Expected (B, 3, H, W) images, got {tuple(images.shape)}")
        s = self.config.stride
        if images.shape[2] % s or images.shape[3] % s:
            raise ShapeMismatch(
                f"Image size {tuple(images.shape[2:])} is not divisible by stride {s}"
            )

        features = self.backbone(images)
        objectness = self.objectness_head(features)[:, 0]
        cat_logits = self.category_head(features).permute(0, 2, 3, 1)
        box_offsets = F.softplus(self.box_head(features)).permute(0, 2, 3, 1) * s
        embeddings = self.embedding_head(features).permute(0, 2, 3, 1)

        return DenseOutput(
            objectness=objectness,
            cat_logits=cat_logits,
            box_offsets=box_offsets,
            embeddings=embeddings,
            stride=s,
        )


def image_to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    Convert an H x W x 3 image (uint8 or float in [0, 1]) to a (3, H, W) tensor.

    Args:
        image: Image array
        dtype: Output dtype

    Returns:
        Tensor scaled to [0, 1]
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatch(f"Expected an H x W x 3 image, got shape {image.shape}")
    array = image.astype(np.float64)
    if image.dtype == np.uint8:
        array = array / 255.0
    return torch.from_numpy(array).permute(2, 0, 1).contiguous().to(dtype)


def cell_centers(grid_size: Tuple[int, int], stride: int) -> Tuple[np.ndarray, np.ndarray]:
    """(cx, cy) arrays of shape (Hf, Wf) with the pixel centers of each cell."""
    hf, wf = grid_size
    cy, cx = np.meshgrid((np.arange(hf) + 0.5) * stride, (np.arange(wf) + 0.5) * stride, indexing="ij")
    return cx, cy


def gather_boxes(out: DenseOutput, image_index: int, cells: List[Tuple[int, int]]) -> torch.Tensor:
    """
    Differentiable (N, 4) xyxy boxes read at the given (row, col) cells.

    Args:
        out: Dense output
        image_index: Batch index
        cells: (row, col) cell indices

    Returns:
        Boxes built from the cell centers and predicted offsets
    """
    offsets = out.box_offsets
    if not cells:
        return offsets.new_zeros((0, 4))
    rows = torch.tensor([r for r, _ in cells], dtype=torch.long)
    cols = torch.tensor([c for _, c in cells], dtype=torch.long)
    picked = offsets[image_index, rows, cols]
    cx = (cols.to(offsets.dtype) + 0.5) * out.stride
    cy = (rows.to(offsets.dtype) + 0.5) * out.stride
    return torch.stack(
        [cx - picked[:, 0], cy - picked[:, 1], cx + picked[:, 2], cy + picked[:, 3]], dim=1
    )


def gather_embeddings(out: DenseOutput, image_index: int, cells: List[Tuple[int, int]]) -> torch.Tensor:
    """Differentiable L2-normalized (N, D) embeddings at the given cells."""
    embeddings = out.embeddings
    if not cells:
        return embeddings.new_zeros((0, embeddings.shape[-1]))
    rows = torch.tensor([r for r, _ in cells], dtype=torch.long)
    cols = torch.tensor([c for _, c in cells], dtype=torch.long)
    return F.normalize(embeddings[image_index, rows, cols], dim=1)


def gather_category_logits(out: DenseOutput, image_index: int, cells: List[Tuple[int, int]]) -> torch.Tensor:
    """Differentiable (N, K) category logits at the given cells."""
    logits = out.cat_logits
    if not cells:
        return logits.new_zeros((0, logits.shape[-1]))
    rows = torch.tensor([r for r, _ in cells], dtype=torch.long)
    cols = torch.tensor([c for _, c in cells], dtype=torch.long)
    return logits[image_index, rows, cols]


def cell_of_point(x: float, y: float, grid_size: Tuple[int, int], stride: int) -> Tuple[int, int]:
    """(row, col) of the cell containing a pixel point, clipped to the grid."""
    hf, wf = grid_size
    row = min(max(int(math.floor(y / stride)), 0), hf - 1)
    col = min(max(int(math.floor(x / stride)), 0), wf - 1)
    return row, col
