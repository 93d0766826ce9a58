from .constants import UNKNOWN
from .model import (
    DetectorConfig,
    DenseOutput,
    DenseDetector,
    image_to_tensor,
    cell_centers,
    cell_of_point,
    gather_boxes,
    gather_embeddings,
    gather_category_logits,
)
from .decode import Instance, decode, decode_batch
from .targets import TargetMap, BatchTargets, assign_targets
from .losses import detection_loss, check_finite
from .checkpoint import save_checkpoint, load_checkpoint
