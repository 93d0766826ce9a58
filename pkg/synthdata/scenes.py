"""
Deterministic synthetic scenes.

Every scene draws from its own counter-based Philox stream keyed by
(seed, image_id), so scenes can be generated in any order or in parallel
with identical results.
"""
import colorsys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from geometry import Box, BinaryMask, iou, mask_to_box
from utils.errors import PlacementFailure
from .constants import (
    KNOWN,
    UNKNOWN_SPLIT,
    SPLITS,
    SHAPE_KINDS,
    COLOR_FAMILIES,
    DEFAULT_IMAGE_SIZE,
    DEFAULT_INSTANCE_RANGE,
    DEFAULT_SIZE_RANGE,
    DEFAULT_MAX_PAIR_IOU,
    MAX_PLACEMENT_ATTEMPTS,
    BACKGROUND_LEVEL,
    BACKGROUND_NOISE,
)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for one (seed, stream...) key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


@dataclass(frozen=True)
class CategorySpec:
    id: int
    name: str
    shape_kind: str
    color: str
    textured: bool
    split: str

    def __post_init__(self):
        if self.shape_kind not in SHAPE_KINDS:
            raise ValueError(f"Unknown shape kind '{self.shape_kind}'")
        if self.color not in COLOR_FAMILIES:
            raise ValueError(f"Unknown color family '{self.color}'")
        if self.split not in SPLITS:
            raise ValueError(f"Unknown split '{self.split}'")

    @property
    def hue_range(self) -> Tuple[float, float]:
        return COLOR_FAMILIES[self.color]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "shape": self.shape_kind,
            "color": self.color,
            "hue_range": list(self.hue_range),
            "textured": self.textured,
            "split": self.split,
        }


def default_roster() -> List[CategorySpec]:
    """Four known and four unknown categories with unique (shape, color) pairs."""
    return [
        CategorySpec(0, "red_disc", "disc", "red", False, KNOWN),
        CategorySpec(1, "green_square", "square", "green", False, KNOWN),
        CategorySpec(2, "blue_triangle", "triangle", "blue", False, KNOWN),
        CategorySpec(3, "yellow_ring", "ring", "yellow", False, KNOWN),
        CategorySpec(4, "blue_disc", "disc", "blue", True, UNKNOWN_SPLIT),
        CategorySpec(5, "yellow_square", "square", "yellow", True, UNKNOWN_SPLIT),
        CategorySpec(6, "red_triangle", "triangle", "red", True, UNKNOWN_SPLIT),
        CategorySpec(7, "green_ring", "ring", "green", True, UNKNOWN_SPLIT),
    ]


def validate_roster(roster: Sequence[CategorySpec]) -> None:
    """
    Check that categories are separable and known ids are 0..K-1.

    Raises:
        ValueError: on duplicate ids, duplicate (shape, color) pairs, or
            non-contiguous known ids
    """
    ids = [c.id for c in roster]
    if len(set(ids)) != len(ids):
        raise ValueError("Category ids must be unique")
    looks = [(c.shape_kind, c.color) for c in roster]
    if len(set(looks)) != len(looks):
        raise ValueError("(shape_kind, color) pairs must be unique across categories")
    known = sorted(c.id for c in roster if c.split == KNOWN)
    if known != list(range(len(known))):
        raise ValueError(f"Known category ids must be 0..K-1, got {known}")


@dataclass
class SceneSpec:
    image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE
    instance_range: Tuple[int, int] = DEFAULT_INSTANCE_RANGE
    size_range: Tuple[int, int] = DEFAULT_SIZE_RANGE
    max_pair_iou: float = DEFAULT_MAX_PAIR_IOU
    roster: List[CategorySpec] = field(default_factory=default_roster)

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        self.instance_range = tuple(self.instance_range)
        self.size_range = tuple(self.size_range)
        self.roster = [c if isinstance(c, CategorySpec) else CategorySpec(**c) for c in self.roster]
        lo, hi = self.instance_range
        if lo < 0 or hi < lo:
            raise ValueError(f"Invalid instance range {self.instance_range}")
        smin, smax = self.size_range
        if smin < 2 or smax < smin or smax > min(self.image_size):
            raise ValueError(f"Invalid size range {self.size_range} for image {self.image_size}")
        if not 0.0 <= self.max_pair_iou <= 1.0:
            raise ValueError("max_pair_iou must lie in [0, 1]")
        validate_roster(self.roster)

    @property
    def categories(self) -> Dict[int, CategorySpec]:
        return {c.id: c for c in self.roster}

    @property
    def known_ids(self) -> List[int]:
        return sorted(c.id for c in self.roster if c.split == KNOWN)

    @property
    def unknown_ids(self) -> List[int]:
        return sorted(c.id for c in self.roster if c.split == UNKNOWN_SPLIT)

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "instance_range": list(self.instance_range),
            "size_range": list(self.size_range),
            "max_pair_iou": self.max_pair_iou,
            "roster": [
                {"id": c.id, "name": c.name, "shape_kind": c.shape_kind, "color": c.color,
                 "textured": c.textured, "split": c.split}
                for c in self.roster
            ],
        }


@dataclass(eq=False)
class AnnotationRecord:
    box: Box
    category_id: int
    split: str
    mask: BinaryMask
    track_id: Optional[int] = None

    @property
    def is_known(self) -> bool:
        return self.split == KNOWN

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotationRecord):
            return NotImplemented
        return (
            self.box == other.box and self.category_id == other.category_id
            and self.split == other.split and self.mask == other.mask
            and self.track_id == other.track_id
        )


@dataclass(eq=False)
class Scene:
    image_id: int
    image: np.ndarray
    records: List[AnnotationRecord]
    sequence_id: Optional[int] = None
    frame_index: Optional[int] = None

    @property
    def known_records(self) -> List[AnnotationRecord]:
        return [r for r in self.records if r.is_known]

    @property
    def unknown_records(self) -> List[AnnotationRecord]:
        return [r for r in self.records if not r.is_known]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.image.shape == other.image.shape
            and bool(np.array_equal(self.image, other.image))
            and self.records == other.records
            and self.sequence_id == other.sequence_id
            and self.frame_index == other.frame_index
        )


@dataclass(eq=False)
class Sprite:
    """Appearance of one object: tight shape mask plus its color and texture."""

    category: CategorySpec
    shape: np.ndarray
    color: Tuple[int, int, int]

    @property
    def size(self) -> Tuple[int, int]:
        """(width, height)."""
        return int(self.shape.shape[1]), int(self.shape.shape[0])

    def pixels(self) -> np.ndarray:
        """h x w x 3 uint8 colors; textured sprites get darker diagonal stripes."""
        h, w = self.shape.shape
        rgb = np.broadcast_to(np.array(self.color, dtype=np.float64), (h, w, 3)).copy()
        if self.category.textured:
            yy, xx = np.mgrid[0:h, 0:w]
            rgb[((xx + yy) // 2) % 2 == 1] *= 0.55
        return rgb.round().astype(np.uint8)


def draw_shape(kind: str, side: int) -> np.ndarray:
    """Rasterize a shape in a side x side canvas and crop it to its tight extent."""
    canvas = Image.new("L", (side, side), 0)
    draw = ImageDraw.Draw(canvas)
    last = side - 1
    if kind == "disc":
        draw.ellipse([0, 0, last, last], fill=1)
    elif kind == "square":
        draw.rectangle([0, 0, last, last], fill=1)
    elif kind == "triangle":
        draw.polygon([(last / 2.0, 0), (0, last), (last, last)], fill=1)
    elif kind == "ring":
        inset = max(side // 4, 1)
        draw.ellipse([0, 0, last, last], fill=1)
        draw.ellipse([inset, inset, last - inset, last - inset], fill=0)
    else:
        raise ValueError(f"Unknown shape kind '{kind}'")

    shape = np.array(canvas, dtype=bool)
    box = mask_to_box(BinaryMask(shape))
    return shape[int(box.y1):int(box.y2), int(box.x1):int(box.x2)]


def sample_color(category: CategorySpec, rng: np.random.Generator) -> Tuple[int, int, int]:
    lo, hi = category.hue_range
    hue = (rng.uniform(lo, hi) % 360.0) / 360.0
    saturation = rng.uniform(0.7, 1.0)
    value = rng.uniform(0.75, 1.0)
    r, g, b = colorsys.hsv_to_rgb(hue, saturation, value)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def sample_sprite(spec: SceneSpec, rng: np.random.Generator) -> Sprite:
    category = spec.roster[int(rng.integers(len(spec.roster)))]
    side = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
    return Sprite(category=category, shape=draw_shape(category.shape_kind, side), color=sample_color(category, rng))


def sprite_box(sprite: Sprite, x: int, y: int) -> Box:
    w, h = sprite.size
    return Box(float(x), float(y), float(x + w), float(y + h))


def make_background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    height, width = spec.image_size
    noise = rng.integers(0, BACKGROUND_NOISE + 1, size=(height, width, 1))
    return np.repeat(BACKGROUND_LEVEL + noise, 3, axis=2).astype(np.uint8)


def render(spec: SceneSpec, background: np.ndarray, sprites: Sequence[Sprite],
           positions: Sequence[Tuple[int, int]],
           track_ids: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, List[AnnotationRecord]]:
    """
    Paint sprites over a background in order and build their annotations.

    Masks are amodal: a sprite painted over another does not remove cells
    from the earlier mask.
    """
    height, width = spec.image_size
    image = background.copy()
    records: List[AnnotationRecord] = []
    for i, (sprite, (x, y)) in enumerate(zip(sprites, positions)):
        w, h = sprite.size
        region = image[y:y + h, x:x + w]
        region[sprite.shape] = sprite.pixels()[sprite.shape]

        cells = np.zeros((height, width), dtype=bool)
        cells[y:y + h, x:x + w] = sprite.shape
        mask = BinaryMask(cells)
        records.append(AnnotationRecord(
            box=mask_to_box(mask),
            category_id=sprite.category.id,
            split=sprite.category.split,
            mask=mask,
            track_id=None if track_ids is None else int(track_ids[i]),
        ))
    return image, records


def place_sprites(spec: SceneSpec, rng: np.random.Generator) -> Tuple[List[Sprite], List[Tuple[int, int]]]:
    """
    Sample sprites and positions respecting the pairwise overlap cap.

    Raises:
        PlacementFailure: if an object cannot be placed within MAX_PLACEMENT_ATTEMPTS
    """
    height, width = spec.image_size
    lo, hi = spec.instance_range
    count = int(rng.integers(lo, hi + 1))

    sprites: List[Sprite] = []
    positions: List[Tuple[int, int]] = []
    boxes: List[Box] = []
    for n in range(count):
        sprite = sample_sprite(spec, rng)
        w, h = sprite.size
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            x = int(rng.integers(0, width - w + 1))
            y = int(rng.integers(0, height - h + 1))
            box = sprite_box(sprite, x, y)
            if all(iou(box, other) <= spec.max_pair_iou for other in boxes):
                break
        else:
            raise PlacementFailure(
                f"Could not place object {n + 1}/{count} under IoU cap {spec.max_pair_iou} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        sprites.append(sprite)
        positions.append((x, y))
        boxes.append(box)
    return sprites, positions


def generate_scene(seed: int, spec: SceneSpec, image_id: int = 0) -> Scene:
    """
    Generate one scene.

    Args:
        seed: Base seed
        spec: Scene specification
        image_id: Image id; also selects the scene's random stream

    Returns:
        Scene with a uint8 H x W x 3 image and one record per object
    """
    rng = make_rng(seed, image_id)
    sprites, positions = place_sprites(spec, rng)
    background = make_background(spec, rng)
    image, records = render(spec, background, sprites, positions)
    return Scene(image_id=image_id, image=image, records=records)
