"""
Appearance-first tracking-by-detection.

Detections are associated to tracks by cosine similarity of instance
embeddings; IoU only gates which pairs may be associated.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from assignment import FORBIDDEN, hungarian
from detector import Instance, UNKNOWN
from geometry import Box, iou_matrix


@dataclass
class TrackerConfig:
    sim_thresh: float = 0.6
    iou_gate: float = 0.1
    max_misses: int = 3
    ema_alpha: float = 0.9
    birth_score: float = 0.5

    def __post_init__(self):
        for name in ("iou_gate", "birth_score"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ValueError(f"ema_alpha must lie in (0, 1], got {self.ema_alpha}")
        if self.max_misses < 0:
            raise ValueError("max_misses must be non-negative")


@dataclass
class Track:
    id: int
    box: Box
    embedding: np.ndarray
    age: int = 0
    misses: int = 0
    label: int = UNKNOWN
    score: float = 0.0


@dataclass
class AssignmentLog:
    """What one step did: (track_id, detection index) matches and births, and deaths."""

    frame: int
    matches: List[Tuple[int, int]] = field(default_factory=list)
    births: List[Tuple[int, int]] = field(default_factory=list)
    deaths: List[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "matches": [list(m) for m in self.matches],
            "births": [list(b) for b in self.births],
            "deaths": list(self.deaths),
        }


def _unit(vector: np.ndarray) -> np.ndarray:
    return vector / max(float(np.linalg.norm(vector)), 1e-12)


def association_cost(tracks: Sequence[Track], detections: Sequence[Instance], cfg: TrackerConfig) -> np.ndarray:
    """
    Cost 1 - cosine, FORBIDDEN where cosine < sim_thresh or IoU < iou_gate.

    Args:
        tracks: Live tracks
        detections: Detections of the current frame
        cfg: Tracker configuration

    Returns:
        (len(tracks), len(detections)) cost matrix
    """
    if not tracks or not detections:
        return np.zeros((len(tracks), len(detections)))
    track_emb = np.stack([t.embedding for t in tracks])
    det_emb = np.stack([_unit(np.asarray(d.embedding, dtype=np.float64)) for d in detections])
    cosine = track_emb @ det_emb.T

    allowed = cosine >= cfg.sim_thresh
    if cfg.iou_gate > 0:
        allowed &= iou_matrix([t.box for t in tracks], [d.box for d in detections]) >= cfg.iou_gate
    return np.where(allowed, 1.0 - cosine, FORBIDDEN)


def step(tracks: Sequence[Track], detections: Sequence[Instance], cfg: TrackerConfig,
         next_id: int, frame: int = 0) -> Tuple[List[Track], AssignmentLog, int]:
    """
    Advance the track set by one frame.

    Matched tracks take the detection box, EMA-update and renormalize their
    embedding and reset misses. Unmatched tracks count a miss and die past
    max_misses. Unmatched detections with objectness >= birth_score start
    tracks with fresh ids, in order of (-objectness, box) so ids do not depend
    on detection input order.

    Args:
        tracks: Tracks alive before this frame
        detections: Detections of this frame
        cfg: Tracker configuration
        next_id: First unused track id
        frame: Frame index recorded in the log

    Returns:
        (tracks alive after the frame, assignment log, next unused id)
    """
    log = AssignmentLog(frame=frame)
    matches = hungarian(association_cost(tracks, detections, cfg)) if tracks and detections else []
    matched_tracks = {r: c for r, c in matches}
    matched_dets = {c for _, c in matches}

    updated: List[Track] = []
    for i, track in enumerate(tracks):
        if i in matched_tracks:
            det = detections[matched_tracks[i]]
            det_emb = _unit(np.asarray(det.embedding, dtype=np.float64))
            blended = cfg.ema_alpha * track.embedding + (1.0 - cfg.ema_alpha) * det_emb
            embedding = _unit(blended) if np.linalg.norm(blended) > 1e-12 else det_emb
            updated.append(replace(track, box=det.box, embedding=embedding, age=track.age + 1,
                                   misses=0, label=det.label, score=det.objectness))
            log.matches.append((track.id, matched_tracks[i]))
        elif track.misses + 1 > cfg.max_misses:
            log.deaths.append(track.id)
        else:
            updated.append(replace(track, age=track.age + 1, misses=track.misses + 1))

    newborn = [
        j for j, det in enumerate(detections)
        if j not in matched_dets and det.objectness >= cfg.birth_score
    ]
    newborn.sort(key=lambda j: (-detections[j].objectness, detections[j].box.as_tuple(), j))
    for j in newborn:
        det = detections[j]
        updated.append(Track(
            id=next_id,
            box=det.box,
            embedding=_unit(np.asarray(det.embedding, dtype=np.float64)),
            label=det.label,
            score=det.objectness,
        ))
        log.births.append((next_id, j))
        next_id += 1

    return updated, log, next_id


class OpenWorldTracker:
    """Stateful wrapper holding the live tracks and the monotone id counter of one sequence."""

    def __init__(self, cfg: Optional[TrackerConfig] = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: List[Track] = []
        self.next_id = 0
        self.frame = 0

    def update(self, detections: Sequence[Instance]) -> AssignmentLog:
        """
        Process one frame of detections.

        Args:
            detections: Detections of the next frame

        Returns:
            Assignment log of the frame
        """
        self.tracks, log, self.next_id = step(self.tracks, detections, self.cfg, self.next_id, self.frame)
        self.frame += 1
        return log

    def active_tracks(self) -> List[Track]:
        """Tracks matched or born in the latest frame."""
        return [t for t in self.tracks if t.misses == 0]
