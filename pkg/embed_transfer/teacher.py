"""Frozen teacher feature maps and the interface that produces them."""
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from utils import logger
from utils.errors import SchemaError, ShapeMismatch


@dataclass(frozen=True, eq=False)
class TeacherFeatureMap:
    """Ht x Wt x Dt features; cell (i, j) covers pixels [j*stride, (j+1)*stride) x [i*stride, (i+1)*stride)."""

    features: np.ndarray
    stride: int

    def __post_init__(self):
        if self.features.ndim != 3:
            raise ShapeMismatch(f"Teacher features must be Ht x Wt x Dt, got {self.features.shape}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if not np.isfinite(self.features).all():
            raise ValueError("Teacher features must be finite")
        frozen = np.array(self.features, dtype=np.float64, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, "features", frozen)

    @property
    def dim(self) -> int:
        return int(self.features.shape[2])


class FeatureTeacher(ABC):
    """Produces a frozen feature map for an image."""

    @abstractmethod
    def extract(self, image_id: int, image: np.ndarray, records: Sequence[Any]) -> TeacherFeatureMap:
        """
        Feature map for one image.

        Args:
            image_id: Dataset image id
            image: H x W x 3 image
            records: Annotation records of the image (used only by oracle teachers)

        Returns:
            TeacherFeatureMap
        """


class OfflineTeacher(FeatureTeacher):
    """Reads precomputed feature maps stored as ``<image_id>.npy`` files."""

    def __init__(self, feature_dir: str, stride: int):
        """
        Initialize the loader.

        Args:
            feature_dir: Directory holding one .npy array (Ht, Wt, Dt) per image
            stride: Pixel stride of the stored maps
        """
        if not os.path.isdir(feature_dir):
            raise FileNotFoundError(f"Feature directory not found: {feature_dir}")
        self.feature_dir = feature_dir
        self.stride = stride

    def path_for(self, image_id: int) -> str:
        return os.path.join(self.feature_dir, f"{image_id:06d}.npy")

    def extract(self, image_id: int, image: np.ndarray, records: Sequence[Any]) -> TeacherFeatureMap:
        path = self.path_for(image_id)
        try:
            features = np.load(path, allow_pickle=False)
        except OSError:
            logger.error(f"Missing teacher features for image {image_id}: {path}")
            raise
        expected = (image.shape[0] // self.stride, image.shape[1] // self.stride)
        if features.ndim != 3 or features.shape[:2] != expected:
            raise SchemaError(f"expected a {expected} feature grid, got {features.shape}", path=path)
        return TeacherFeatureMap(features=features, stride=self.stride)
