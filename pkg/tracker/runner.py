import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch

from detector import DenseDetector, Instance, UNKNOWN, decode, image_to_tensor
from embed_transfer import FeatureTeacher, roi_pool_teacher
from geometry import Box
from synthdata import Scene
from utils import logger
from .tracker import AssignmentLog, OpenWorldTracker, TrackerConfig


class DetectionSource(ABC):
    """Produces the detections of one frame."""

    @abstractmethod
    def detect(self, frame: Scene) -> List[Instance]:
        """Detections for a frame."""


class DetectorSource(DetectionSource):
    """Runs a trained detector on each frame."""

    def __init__(self, model: DenseDetector):
        self.model = model.eval()
        self.dtype = next(model.parameters()).dtype

    @torch.no_grad()
    def detect(self, frame: Scene) -> List[Instance]:
        out = self.model(image_to_tensor(frame.image, self.dtype).unsqueeze(0))
        return decode(out, self.model.config, 0)


class GroundTruthSource(DetectionSource):
    """Ground-truth boxes carrying teacher embeddings pooled over each box."""

    def __init__(self, teacher: FeatureTeacher, objectness: float = 1.0):
        self.teacher = teacher
        self.objectness = objectness

    def detect(self, frame: Scene) -> List[Instance]:
        if not frame.records:
            return []
        features = self.teacher.extract(frame.image_id, frame.image, frame.records)
        embeddings = roi_pool_teacher(features, [r.box for r in frame.records])
        return [
            Instance(
                box=r.box,
                objectness=self.objectness,
                label=r.category_id if r.is_known else UNKNOWN,
                embedding=embeddings[i],
            )
            for i, r in enumerate(frame.records)
        ]


@dataclass
class TrackRow:
    frame: int
    track_id: int
    box: Box
    label: int
    score: float

    def to_mot(self) -> str:
        x, y, w, h = self.box.to_xywh()
        return f"{self.frame},{self.track_id},{x:.2f},{y:.2f},{w:.2f},{h:.2f},{self.label},{self.score:.4f}"


@dataclass
class TrackingRun:
    rows: List[TrackRow] = field(default_factory=list)
    logs: List[AssignmentLog] = field(default_factory=list)
    frames: List[List[Tuple[int, Box]]] = field(default_factory=list)

    @property
    def track_ids(self) -> List[int]:
        return sorted({row.track_id for row in self.rows})


def run(frames: Sequence[Scene], source: DetectionSource, cfg: Optional[TrackerConfig] = None) -> TrackingRun:
    """
    Track one sequence.

    Args:
        frames: Frames in temporal order
        source: Detection source (detector or ground truth)
        cfg: Tracker configuration

    Returns:
        TrackingRun with per-frame output rows, assignment logs and (track_id, box) observations
    """
    tracker = OpenWorldTracker(cfg)
    result = TrackingRun()
    for t, frame in enumerate(frames):
        log = tracker.update(source.detect(frame))
        active = tracker.active_tracks()
        result.logs.append(log)
        result.frames.append([(track.id, track.box) for track in active])
        result.rows.extend(TrackRow(t, track.id, track.box, track.label, track.score) for track in active)
    logger.info(f"Tracked {len(frames)} frames: {len(result.track_ids)} tracks")
    return result


def gt_frame_tracks(frames: Sequence[Scene]) -> List[List[Tuple[int, Box]]]:
    """Ground-truth (track_id, box) observations per frame."""
    return [[(r.track_id, r.box) for r in frame.records] for frame in frames]


def write_mot(rows: Sequence[TrackRow], path: str) -> str:
    """
    Write rows as MOT-style text: frame,track_id,x,y,w,h,label,score

    Args:
        rows: Output rows
        path: Destination file

    Returns:
        The path written
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(row.to_mot() + "\n")
    return path
