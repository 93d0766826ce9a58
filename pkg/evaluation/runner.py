"""Running a detector over scenes and scoring the result."""
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from detector import DenseDetector, Instance, cell_of_point, decode, gather_embeddings, image_to_tensor
from synthdata import Scene
from .clustering import ClusteringScore, clustering_quality
from .detection import DetectionResult, GroundTruth, average_precision, unknown_recall
from .report import MetricReport


def scene_ground_truth(scene: Scene) -> List[GroundTruth]:
    return [GroundTruth(box=r.box, category_id=r.category_id, known=r.is_known) for r in scene.records]


@torch.no_grad()
def predict_scenes(model: DenseDetector, scenes: Sequence[Scene], batch_size: int = 16) -> List[List[Instance]]:
    """
    Decoded detections per scene.

    Args:
        model: Detector
        scenes: Scenes to run
        batch_size: Images per forward pass

    Returns:
        One instance list per scene
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    predictions: List[List[Instance]] = []
    for start in range(0, len(scenes), batch_size):
        chunk = scenes[start:start + batch_size]
        images = torch.stack([image_to_tensor(s.image, dtype) for s in chunk])
        out = model(images)
        predictions.extend(decode(out, model.config, i) for i in range(len(chunk)))
    return predictions


@torch.no_grad()
def unknown_gt_embeddings(model: DenseDetector, scenes: Sequence[Scene],
                          batch_size: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """
    Student embeddings read at the center cell of every unknown gt box.

    Args:
        model: Detector
        scenes: Scenes with unknown annotations
        batch_size: Images per forward pass

    Returns:
        ((N, D) unit embeddings, (N,) hidden category ids)
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    vectors, labels = [], []
    for start in range(0, len(scenes), batch_size):
        chunk = scenes[start:start + batch_size]
        images = torch.stack([image_to_tensor(s.image, dtype) for s in chunk])
        out = model(images)
        for i, scene in enumerate(chunk):
            records = scene.unknown_records
            cells = [cell_of_point(*r.box.center, out.grid_size, out.stride) for r in records]
            if cells:
                vectors.append(gather_embeddings(out, i, cells).double().numpy())
                labels.extend(r.category_id for r in records)
    if not vectors:
        return np.zeros((0, model.config.embed_dim)), np.zeros((0,), dtype=np.int64)
    return np.concatenate(vectors), np.asarray(labels, dtype=np.int64)


def detection_report(scenes: Sequence[Scene], predictions: Sequence[List[Instance]],
                     known_classes: Optional[Sequence[int]] = None, iou_thresh: float = 0.5,
                     include_all_unknown: bool = False, seed: int = 0) -> MetricReport:
    """mAP, per-class AP and U-Recall for decoded predictions."""
    results = [
        DetectionResult(image_id=s.image_id, predictions=list(p), ground_truth=scene_ground_truth(s))
        for s, p in zip(scenes, predictions)
    ]
    per_class, mean_ap = average_precision(results, iou_thresh, known_classes)
    return MetricReport(
        seed=seed,
        map=mean_ap,
        per_class_ap={str(k): v for k, v in per_class.items()},
        u_recall=unknown_recall(results, iou_thresh, include_all_unknown),
    )


def embedding_report(embeddings: np.ndarray, labels: np.ndarray, k: Optional[int] = None,
                     seed: int = 0) -> Tuple[MetricReport, ClusteringScore]:
    """Class-discovery metrics; k defaults to the number of hidden categories."""
    k = k or int(len(np.unique(labels)))
    score = clustering_quality(embeddings, labels, k, seed=seed)
    report = MetricReport(seed=seed, unknown_nmi=score.nmi, unknown_purity=score.purity)
    return report, score
