"""
Desk-scale stand-ins for a promptable segmenter and a vision foundation model.

The segmenter returns ground-truth masks, optionally dilated/eroded and
randomly dropped. The teacher paints each instance box with its category's
fixed prototype vector plus Gaussian noise, so same-category instances are
more similar than cross-category ones.
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import ndimage

from embed_transfer import FeatureTeacher, OfflineTeacher, TeacherFeatureMap
from geometry import BinaryMask
from .constants import TEACHER_DIM, TEACHER_STRIDE, TEACHER_SIGMA, PROTOTYPE_SEED
from .scenes import AnnotationRecord, make_rng

# Stream tags separating oracle randomness from scene randomness
SEGMENTER_STREAM = 1
TEACHER_STREAM = 2

TEACHER_KINDS = ("oracle", "offline")


@dataclass
class SegmenterConfig:
    radius: int = 0
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError(f"drop_prob must lie in [0, 1], got {self.drop_prob}")


@dataclass
class TeacherConfig:
    """
    Teacher settings. kind "oracle" paints prototypes from the annotations;
    kind "offline" reads precomputed maps from feature_dir, stored at stride.
    """

    dim: int = TEACHER_DIM
    stride: int = TEACHER_STRIDE
    sigma: float = TEACHER_SIGMA
    seed: int = 0
    kind: str = "oracle"
    feature_dir: str = ""

    def __post_init__(self):
        if self.dim < 2 or self.stride < 1 or self.sigma < 0:
            raise ValueError(f"Invalid teacher config {self}")
        if self.kind not in TEACHER_KINDS:
            raise ValueError(f"teacher kind must be one of {TEACHER_KINDS}, got {self.kind!r}")
        if self.kind == "offline" and not self.feature_dir:
            raise ValueError("an offline teacher needs feature_dir")


def oracle_segmenter(records: Sequence[AnnotationRecord], cfg: SegmenterConfig = None,
                     image_id: int = 0) -> List[BinaryMask]:
    """
    Class-agnostic masks for a scene.

    Each mask is dropped with probability drop_prob; a positive radius
    dilates and a negative radius erodes with a 3 x 3 square element.
    Erosion may empty a mask; consumers drop empty masks.

    Args:
        records: Scene annotations
        cfg: Degradation knobs
        image_id: Selects the random stream together with cfg.seed

    Returns:
        Masks for the kept instances, in record order
    """
    cfg = cfg or SegmenterConfig()
    rng = make_rng(cfg.seed, SEGMENTER_STREAM, image_id)
    structure = np.ones((3, 3), dtype=bool)

    masks: List[BinaryMask] = []
    for record in records:
        if rng.random() < cfg.drop_prob:
            continue
        cells = record.mask.cells
        if cfg.radius > 0:
            cells = ndimage.binary_dilation(cells, structure=structure, iterations=cfg.radius)
        elif cfg.radius < 0:
            cells = ndimage.binary_erosion(cells, structure=structure, iterations=-cfg.radius)
        masks.append(BinaryMask(np.array(cells, dtype=bool)))
    return masks


def category_prototypes(num_categories: int, dim: int = TEACHER_DIM) -> np.ndarray:
    """
    Fixed unit prototypes; row num_categories is the background prototype.

    Rows are orthonormal whenever num_categories + 1 <= dim, so distinct
    categories have zero cosine without noise.

    Args:
        num_categories: Number of category rows
        dim: Feature dimension

    Returns:
        (num_categories + 1, dim) unit vectors
    """
    rng = make_rng(PROTOTYPE_SEED, dim)
    vectors = rng.standard_normal((num_categories + 1, dim))
    if num_categories + 1 <= dim:
        basis, _ = np.linalg.qr(vectors.T)
        vectors = basis.T
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def oracle_teacher(image: np.ndarray, records: Sequence[AnnotationRecord],
                   cfg: TeacherConfig = None, num_categories: int = 8,
                   image_id: int = 0) -> TeacherFeatureMap:
    """
    Teacher feature map for a scene.

    Cells whose center lies inside an instance box carry that category's
    prototype. A cell inside several boxes carries the sum of their
    prototypes, so overlapping instances share the cell and the map does not
    depend on record order. All other cells carry the background prototype.
    Gaussian noise with std sigma is added per entry.

    Args:
        image: H x W x 3 image (only its size is used)
        records: Scene annotations
        cfg: Teacher configuration
        num_categories: Size of the category id space
        image_id: Selects the noise stream together with cfg.seed

    Returns:
        TeacherFeatureMap of shape (H / stride, W / stride, dim)
    """
    cfg = cfg or TeacherConfig()
    height, width = image.shape[:2]
    ht, wt = height // cfg.stride, width // cfg.stride

    prototypes = category_prototypes(num_categories, cfg.dim)
    painted = np.zeros((ht, wt, cfg.dim))
    covered = np.zeros((ht, wt), dtype=bool)

    centers_x = (np.arange(wt) + 0.5) * cfg.stride
    centers_y = (np.arange(ht) + 0.5) * cfg.stride
    for record in records:
        box = record.box
        cols = (centers_x >= box.x1) & (centers_x < box.x2)
        rows = (centers_y >= box.y1) & (centers_y < box.y2)
        painted[np.ix_(rows, cols)] += prototypes[record.category_id]
        covered[np.ix_(rows, cols)] = True
    features = np.where(covered[..., None], painted, prototypes[num_categories])

    if cfg.sigma > 0:
        rng = make_rng(cfg.seed, TEACHER_STREAM, image_id)
        features = features + rng.normal(0.0, cfg.sigma, size=features.shape)

    return TeacherFeatureMap(features=features, stride=cfg.stride)


class OracleTeacher(FeatureTeacher):
    """FeatureTeacher backed by oracle_teacher."""

    def __init__(self, cfg: TeacherConfig = None, num_categories: int = 8):
        self.cfg = cfg or TeacherConfig()
        self.num_categories = num_categories

    def extract(self, image_id: int, image: np.ndarray, records: Sequence[AnnotationRecord]) -> TeacherFeatureMap:
        return oracle_teacher(image, records, self.cfg, self.num_categories, image_id)


def make_teacher(cfg: TeacherConfig, num_categories: int) -> FeatureTeacher:
    """
    Build the teacher named by cfg.kind.

    Args:
        cfg: Teacher configuration
        num_categories: Size of the category id space (oracle teacher only)

    Returns:
        OracleTeacher or OfflineTeacher
    """
    if cfg.kind == "offline":
        return OfflineTeacher(cfg.feature_dir, stride=cfg.stride)
    return OracleTeacher(cfg, num_categories=num_categories)
