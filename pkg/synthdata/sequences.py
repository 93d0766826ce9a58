import math
from itertools import combinations
from typing import List, Sequence, Tuple

import numpy as np

from geometry import Box, BinaryMask, iou, mask_to_box
from utils.errors import PlacementFailure
from .constants import MAX_PLACEMENT_ATTEMPTS
from .scenes import Scene, SceneSpec, Sprite, make_background, make_rng, place_sprites, render

# Stream tag for sequence layouts
SEQUENCE_STREAM = 3


def reflect_position(start: float, velocity: float, t: float, span: float) -> float:
    """
    Position at time t of a point bouncing between 0 and span.

    Args:
        start: Position at t = 0, within [0, span]
        velocity: Pixels per frame
        t: Frame index
        span: Travel range (image extent minus object extent)

    Returns:
        Reflected position in [0, span]
    """
    if span <= 0:
        return 0.0
    period = 2.0 * span
    phase = math.fmod(start + velocity * t, period)
    if phase < 0:
        phase += period
    return phase if phase <= span else period - phase


def bounce_step(position: float, velocity: float, span: float) -> Tuple[float, float]:
    """One frame of motion between 0 and span; the velocity flips at a border."""
    if span <= 0:
        return 0.0, velocity
    moved = position + velocity
    if moved < 0.0:
        return -moved, -velocity
    if moved > span:
        return 2.0 * span - moved, -velocity
    return moved, velocity


def sprite_extent(sprite: Sprite) -> Box:
    """Tight box of the sprite's shape relative to its top-left corner."""
    return mask_to_box(BinaryMask(np.asarray(sprite.shape, dtype=bool)))


def layout_boxes(extents: Sequence[Box], positions: Sequence[Tuple[int, int]]) -> List[Box]:
    return [Box(e.x1 + x, e.y1 + y, e.x2 + x, e.y2 + y) for e, (x, y) in zip(extents, positions)]


def overlap_violations(boxes: Sequence[Box], categories: Sequence[int], max_pair_iou: float) -> List[Tuple[int, int]]:
    """
    Object pairs breaking the sequence overlap rules.

    Any two objects may overlap up to max_pair_iou; objects of the same
    category may not overlap at all, so same-looking objects never share pixels.
    """
    bad = []
    for i, j in combinations(range(len(boxes)), 2):
        overlap = iou(boxes[i], boxes[j])
        if overlap > max_pair_iou or (categories[i] == categories[j] and overlap > 0.0):
            bad.append((i, j))
    return bad


def _rounded(points: np.ndarray) -> List[Tuple[int, int]]:
    return [(int(np.floor(x + 0.5)), int(np.floor(y + 0.5))) for x, y in points]


def generate_sequence(seed: int, spec: SceneSpec, length: int, max_speed: float = 2.0,
                      sequence_id: int = 0, first_image_id: int = 0) -> List[Scene]:
    """
    Frames of objects moving with piecewise-constant velocity.

    Objects keep their category and appearance and keep their track id (the
    object index) for the whole sequence. A velocity component flips when the
    object reaches the image border. When a move would break the overlap
    rules of overlap_violations, the objects involved hold their previous
    position for that frame and reverse their velocity, so the rules hold in
    every frame. A lone object therefore follows reflect_position.

    Args:
        seed: Base seed
        spec: Scene specification for the first frame layout
        length: Number of frames, at least 1
        max_speed: Velocity components are uniform in [-max_speed, max_speed]
        sequence_id: Sequence id stored on every frame; also selects the random stream
        first_image_id: Image id of frame 0; later frames count up

    Returns:
        Scenes with sequence_id, frame_index and per-record track ids

    Raises:
        PlacementFailure: if no first-frame layout satisfies the overlap rules
            within MAX_PLACEMENT_ATTEMPTS
    """
    if length < 1:
        raise ValueError(f"Sequence length must be at least 1, got {length}")

    rng = make_rng(seed, SEQUENCE_STREAM, sequence_id)
    background = make_background(spec, rng)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        sprites, starts = place_sprites(spec, rng)
        extents = [sprite_extent(s) for s in sprites]
        categories = [s.category.id for s in sprites]
        if not overlap_violations(layout_boxes(extents, starts), categories, spec.max_pair_iou):
            break
    else:
        raise PlacementFailure(
            f"Could not lay out sequence {sequence_id} under the overlap rules "
            f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
        )

    velocities = rng.uniform(-max_speed, max_speed, size=(len(sprites), 2))
    height, width = spec.image_size
    spans = [(width - s.size[0], height - s.size[1]) for s in sprites]
    points = np.asarray(starts, dtype=np.float64).reshape(-1, 2)
    positions = _rounded(points)
    track_ids = list(range(len(sprites)))

    frames: List[Scene] = []
    for t in range(length):
        if t > 0:
            proposed = points.copy()
            proposed_v = velocities.copy()
            for i, (span_x, span_y) in enumerate(spans):
                proposed[i, 0], proposed_v[i, 0] = bounce_step(points[i, 0], velocities[i, 0], span_x)
                proposed[i, 1], proposed_v[i, 1] = bounce_step(points[i, 1], velocities[i, 1], span_y)

            held = np.zeros(len(sprites), dtype=bool)
            while True:
                candidate = [positions[i] if held[i] else p for i, p in enumerate(_rounded(proposed))]
                bad = overlap_violations(layout_boxes(extents, candidate), categories, spec.max_pair_iou)
                movers = {k for pair in bad for k in pair if not held[k]}
                if not movers:
                    break
                held[sorted(movers)] = True

            for i in range(len(sprites)):
                if held[i]:
                    velocities[i] = -velocities[i]
                else:
                    points[i], velocities[i] = proposed[i], proposed_v[i]
            positions = candidate

        image, records = render(spec, background, sprites, positions, track_ids)
        frames.append(Scene(
            image_id=first_image_id + t,
            image=image,
            records=records,
            sequence_id=sequence_id,
            frame_index=t,
        ))
    return frames
